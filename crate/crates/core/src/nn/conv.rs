//! 3D convolution over `(maps, x, y, z)` tensors and its transpose.
//!
//! Kernels are stored as `(m_in, P, Q, R, m_out)`. With stride one the output
//! at `(j, x, y, z)` is `f(sum_i sum_pqr k[i,p,q,r,j] * in[i, x+p, y+q, z+r] + b[j])`,
//! shifted by the padding offset when `Same` padding is used.

use serde::{Deserialize, Serialize};

use super::activation::Activation;
use crate::error::{Error, Result};
use crate::tensor::{store, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// No padding; each spatial extent shrinks by `kernel - 1`.
    Valid,
    /// Zero padding that keeps extents unchanged.
    Same,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv3dLayer<T: Scalar = f32> {
    pub kernels: Tensor<T>,
    pub biases: Vec<T>,
    pub activation: Activation,
}

#[derive(Clone, Debug)]
pub struct ConvGrads<T: Scalar = f32> {
    pub input: Tensor<T>,
    pub kernels: Tensor<T>,
    pub biases: Vec<T>,
}

impl<T: Scalar> Conv3dLayer<T> {
    pub fn new(kernels: Tensor<T>, biases: Vec<T>, activation: Activation) -> Result<Self> {
        kernels.expect_rank("conv3d layer", 5)?;
        let s = kernels.shape();
        if s.contains(&0) {
            return Err(Error::invalid(format!("empty kernel extents {s:?}")));
        }
        if biases.len() != s[4] {
            return Err(Error::shape("conv3d biases", &[s[4]], &[biases.len()]));
        }
        Ok(Conv3dLayer {
            kernels,
            biases,
            activation,
        })
    }

    pub fn zeros(m_in: usize, extent: [usize; 3], m_out: usize, activation: Activation) -> Self {
        Conv3dLayer {
            kernels: Tensor::zeros([m_in, extent[0], extent[1], extent[2], m_out]),
            biases: vec![T::default(); m_out],
            activation,
        }
    }

    pub fn in_maps(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn out_maps(&self) -> usize {
        self.kernels.shape()[4]
    }

    pub fn extent(&self) -> [usize; 3] {
        let s = self.kernels.shape();
        [s[1], s[2], s[3]]
    }
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    /// Extents of the correlation input (the larger side for `Valid`).
    wide: [usize; 3],
    /// Extents of the correlation output.
    narrow: [usize; 3],
    kernel: [usize; 3],
    pad: [usize; 3],
}

impl Geometry {
    fn from_input(op: &'static str, input: [usize; 3], kernel: [usize; 3], padding: Padding) -> Result<Self> {
        match padding {
            Padding::Valid => {
                if (0..3).any(|a| input[a] < kernel[a]) {
                    return Err(Error::shape(op, &kernel, &input));
                }
                Ok(Geometry {
                    wide: input,
                    narrow: [0, 1, 2].map(|a| input[a] - kernel[a] + 1),
                    kernel,
                    pad: [0; 3],
                })
            }
            Padding::Same => {
                if kernel[0].is_multiple_of(2) || kernel[1].is_multiple_of(2) {
                    return Err(Error::invalid(format!(
                        "same padding needs odd spatial kernel extents, got {kernel:?}"
                    )));
                }
                Ok(Geometry {
                    wide: input,
                    narrow: input,
                    kernel,
                    pad: kernel.map(|k| (k - 1) / 2),
                })
            }
        }
    }

    fn from_output(output: [usize; 3], kernel: [usize; 3], padding: Padding) -> Result<Self> {
        match padding {
            Padding::Valid => Ok(Geometry {
                wide: [0, 1, 2].map(|a| output[a] + kernel[a] - 1),
                narrow: output,
                kernel,
                pad: [0; 3],
            }),
            Padding::Same => Self::from_input("deconv3d", output, kernel, padding),
        }
    }

    /// Range of narrow-side positions whose source `o + k - pad` is in bounds.
    #[inline]
    fn range(&self, axis: usize, k: usize) -> (usize, usize) {
        let pad = self.pad[axis];
        let lo = pad.saturating_sub(k);
        let hi = (self.wide[axis] + pad).saturating_sub(k).min(self.narrow[axis]);
        (lo, hi.max(lo))
    }

    fn wide_len(&self) -> usize {
        self.wide.iter().product()
    }

    fn narrow_len(&self) -> usize {
        self.narrow.iter().product()
    }
}

fn spatial(shape: &[usize]) -> [usize; 3] {
    [shape[1], shape[2], shape[3]]
}

#[inline]
fn kidx(k: &[usize], i: usize, p: usize, q: usize, r: usize, j: usize) -> usize {
    (((i * k[1] + p) * k[2] + q) * k[3] + r) * k[4] + j
}

/// `narrow[j] += sum_i sum_pqr w[i,p,q,r,j] * wide[i, o + pqr - pad]`.
fn correlate<T: Scalar>(wide: &[T], kernel: &Tensor<T>, g: &Geometry, narrow: &mut [f64]) {
    let ks = kernel.shape();
    let (m_in, m_out) = (ks[0], ks[4]);
    let kd = kernel.data();
    let [_, wy, wz] = g.wide;
    let [_, ny, nz] = g.narrow;
    let (wl, nl) = (g.wide_len(), g.narrow_len());
    for j in 0..m_out {
        let dst_map = &mut narrow[j * nl..(j + 1) * nl];
        for i in 0..m_in {
            let src_map = &wide[i * wl..(i + 1) * wl];
            for p in 0..g.kernel[0] {
                let (xlo, xhi) = g.range(0, p);
                for q in 0..g.kernel[1] {
                    let (ylo, yhi) = g.range(1, q);
                    for r in 0..g.kernel[2] {
                        let (zlo, zhi) = g.range(2, r);
                        if zlo >= zhi {
                            continue;
                        }
                        let w = kd[kidx(ks, i, p, q, r, j)].to_f64();
                        if w == 0.0 {
                            continue;
                        }
                        let zs = zlo + r - g.pad[2];
                        let zn = zhi - zlo;
                        for x in xlo..xhi {
                            let sx = x + p - g.pad[0];
                            for y in ylo..yhi {
                                let sy = y + q - g.pad[1];
                                let src = &src_map[(sx * wy + sy) * wz + zs..][..zn];
                                let dst = &mut dst_map[(x * ny + y) * nz + zlo..][..zn];
                                for (d, s) in dst.iter_mut().zip(src) {
                                    *d += w * s.to_f64();
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`correlate`]: `wide[i, o + pqr - pad] += w[i,p,q,r,j] * narrow[j, o]`.
fn correlate_adjoint(narrow: &[f64], kernel_data: &[f64], ks: &[usize], g: &Geometry, wide: &mut [f64]) {
    let (m_in, m_out) = (ks[0], ks[4]);
    let [_, wy, wz] = g.wide;
    let [_, ny, nz] = g.narrow;
    let (wl, nl) = (g.wide_len(), g.narrow_len());
    for i in 0..m_in {
        let dst_map = &mut wide[i * wl..(i + 1) * wl];
        for j in 0..m_out {
            let src_map = &narrow[j * nl..(j + 1) * nl];
            for p in 0..g.kernel[0] {
                let (xlo, xhi) = g.range(0, p);
                for q in 0..g.kernel[1] {
                    let (ylo, yhi) = g.range(1, q);
                    for r in 0..g.kernel[2] {
                        let (zlo, zhi) = g.range(2, r);
                        if zlo >= zhi {
                            continue;
                        }
                        let w = kernel_data[kidx(ks, i, p, q, r, j)];
                        if w == 0.0 {
                            continue;
                        }
                        let zs = zlo + r - g.pad[2];
                        let zn = zhi - zlo;
                        for x in xlo..xhi {
                            let sx = x + p - g.pad[0];
                            for y in ylo..yhi {
                                let sy = y + q - g.pad[1];
                                let src = &src_map[(x * ny + y) * nz + zlo..][..zn];
                                let dst = &mut dst_map[(sx * wy + sy) * wz + zs..][..zn];
                                for (d, s) in dst.iter_mut().zip(src) {
                                    *d += w * s;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `gk[i,p,q,r,j] = sum_o narrow[j, o] * wide[i, o + pqr - pad]`.
fn kernel_gradient<T: Scalar>(wide: &[T], narrow: &[f64], ks: &[usize], g: &Geometry) -> Vec<f64> {
    let (m_in, m_out) = (ks[0], ks[4]);
    let [_, wy, wz] = g.wide;
    let [_, ny, nz] = g.narrow;
    let (wl, nl) = (g.wide_len(), g.narrow_len());
    let mut gk = vec![0.0; ks.iter().product()];
    for i in 0..m_in {
        let w_map = &wide[i * wl..(i + 1) * wl];
        for j in 0..m_out {
            let n_map = &narrow[j * nl..(j + 1) * nl];
            for p in 0..g.kernel[0] {
                let (xlo, xhi) = g.range(0, p);
                for q in 0..g.kernel[1] {
                    let (ylo, yhi) = g.range(1, q);
                    for r in 0..g.kernel[2] {
                        let (zlo, zhi) = g.range(2, r);
                        if zlo >= zhi {
                            continue;
                        }
                        let zs = zlo + r - g.pad[2];
                        let zn = zhi - zlo;
                        let mut acc = 0.0;
                        for x in xlo..xhi {
                            let sx = x + p - g.pad[0];
                            for y in ylo..yhi {
                                let sy = y + q - g.pad[1];
                                let a = &w_map[(sx * wy + sy) * wz + zs..][..zn];
                                let b = &n_map[(x * ny + y) * nz + zlo..][..zn];
                                for (s, d) in a.iter().zip(b) {
                                    acc += s.to_f64() * d;
                                }
                            }
                        }
                        gk[kidx(ks, i, p, q, r, j)] = acc;
                    }
                }
            }
        }
    }
    gk
}

fn check_input<T: Scalar>(op: &'static str, input: &Tensor<T>, maps: usize) -> Result<()> {
    input.expect_rank(op, 4)?;
    if input.shape()[0] != maps {
        let mut expected = input.shape().to_vec();
        expected[0] = maps;
        return Err(Error::shape(op, &expected, input.shape()));
    }
    Ok(())
}

fn activate(acc: &mut [f64], activation: Activation) {
    if activation != Activation::Identity {
        for v in acc.iter_mut() {
            *v = activation.apply(*v);
        }
    }
}

/// Output shape of [`conv3d_forward`] without running it.
pub fn conv3d_output_shape(
    input: &[usize],
    layer_extent: [usize; 3],
    out_maps: usize,
    padding: Padding,
) -> Result<Vec<usize>> {
    if input.len() != 4 {
        return Err(Error::shape("conv3d", &[0; 4], input));
    }
    let g = Geometry::from_input("conv3d", spatial(input), layer_extent, padding)?;
    Ok(vec![out_maps, g.narrow[0], g.narrow[1], g.narrow[2]])
}

pub fn conv3d_forward<T: Scalar>(input: &Tensor<T>, layer: &Conv3dLayer<T>, padding: Padding) -> Result<Tensor<T>> {
    check_input("conv3d", input, layer.in_maps())?;
    let g = Geometry::from_input("conv3d", spatial(input.shape()), layer.extent(), padding)?;
    let nl = g.narrow_len();
    let mut acc = vec![0.0; layer.out_maps() * nl];
    for (j, b) in layer.biases.iter().enumerate() {
        acc[j * nl..(j + 1) * nl].fill(b.to_f64());
    }
    correlate(input.data(), &layer.kernels, &g, &mut acc);
    activate(&mut acc, layer.activation);
    Tensor::new([layer.out_maps(), g.narrow[0], g.narrow[1], g.narrow[2]], store(acc))
}

fn pre_activation_grad<T: Scalar>(output: &Tensor<T>, grad_out: &Tensor<T>, activation: Activation) -> Vec<f64> {
    output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(y, g)| g.to_f64() * activation.derivative_from_output(y.to_f64()))
        .collect()
}

/// Gradients of `conv3d_forward` (activation included) given the upstream
/// gradient. Recomputes the forward output.
pub fn conv3d_backward<T: Scalar>(
    input: &Tensor<T>,
    layer: &Conv3dLayer<T>,
    padding: Padding,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let output = conv3d_forward(input, layer, padding)?;
    conv3d_backward_cached(input, layer, padding, &output, grad_out)
}

/// As [`conv3d_backward`] with the forward output supplied by the caller.
pub fn conv3d_backward_cached<T: Scalar>(
    input: &Tensor<T>,
    layer: &Conv3dLayer<T>,
    padding: Padding,
    output: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    check_input("conv3d_backward", input, layer.in_maps())?;
    grad_out.expect_shape("conv3d_backward", output.shape())?;
    let g = Geometry::from_input("conv3d_backward", spatial(input.shape()), layer.extent(), padding)?;
    let pre = pre_activation_grad(output, grad_out, layer.activation);
    let nl = g.narrow_len();
    let biases = (0..layer.out_maps())
        .map(|j| T::from_f64(pre[j * nl..(j + 1) * nl].iter().sum()))
        .collect();
    let ks = layer.kernels.shape();
    let gk = kernel_gradient(input.data(), &pre, ks, &g);
    let kd: Vec<f64> = layer.kernels.data().iter().map(|v| v.to_f64()).collect();
    let mut gin = vec![0.0; input.len()];
    correlate_adjoint(&pre, &kd, ks, &g, &mut gin);
    Ok(ConvGrads {
        input: Tensor::new(input.shape(), store(gin))?,
        kernels: Tensor::new(ks, store(gk))?,
        biases,
    })
}

/// Transposed convolution: the adjoint of [`conv3d_forward`] with the same
/// kernels, followed by the layer activation. Maps `m_out` maps to `m_in`
/// maps. The layer biases belong to the forward direction and are not
/// applied.
pub fn deconv3d<T: Scalar>(input: &Tensor<T>, layer: &Conv3dLayer<T>, padding: Padding) -> Result<Tensor<T>> {
    check_input("deconv3d", input, layer.out_maps())?;
    let g = Geometry::from_output(spatial(input.shape()), layer.extent(), padding)?;
    let narrow: Vec<f64> = input.data().iter().map(|v| v.to_f64()).collect();
    let kd: Vec<f64> = layer.kernels.data().iter().map(|v| v.to_f64()).collect();
    let mut wide = vec![0.0; layer.in_maps() * g.wide_len()];
    correlate_adjoint(&narrow, &kd, layer.kernels.shape(), &g, &mut wide);
    activate(&mut wide, layer.activation);
    Tensor::new([layer.in_maps(), g.wide[0], g.wide[1], g.wide[2]], store(wide))
}

/// Gradients of [`deconv3d`]. The returned `biases` entry is empty.
pub fn deconv3d_backward<T: Scalar>(
    input: &Tensor<T>,
    layer: &Conv3dLayer<T>,
    padding: Padding,
    output: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    check_input("deconv3d_backward", input, layer.out_maps())?;
    grad_out.expect_shape("deconv3d_backward", output.shape())?;
    let g = Geometry::from_output(spatial(input.shape()), layer.extent(), padding)?;
    let pre = pre_activation_grad(output, grad_out, layer.activation);
    let pre_t: Vec<T> = store(pre);
    // d/d input: the forward correlation applied to the wide-side gradient.
    let mut gin = vec![0.0; input.len()];
    correlate(&pre_t, &layer.kernels, &g, &mut gin);
    // d/d kernel: wide side is the upstream gradient, narrow side the input.
    let narrow: Vec<f64> = input.data().iter().map(|v| v.to_f64()).collect();
    let gk = kernel_gradient(&pre_t, &narrow, layer.kernels.shape(), &g);
    Ok(ConvGrads {
        input: Tensor::new(input.shape(), store(gin))?,
        kernels: Tensor::new(layer.kernels.shape(), store(gk))?,
        biases: Vec::new(),
    })
}
