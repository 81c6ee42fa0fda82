//! Unpooling and deconvolution stages that bring pooled potential-net scores
//! back to voxel resolution.
//!
//! Stage `i` undoes the `i`-th pool counted from the end. Pool records carry
//! the channel count of the conv layer that fed the pool, so each stage first
//! lifts the score channels to that count with a 1x1x1 deconvolution, unpools
//! with the recorded switches, then deconvolves back to the score width with
//! the extent of the mirrored conv layer.

use serde::{Deserialize, Serialize};

use crate::cnn::{LayerSpec, NetworkSpec};
use crate::error::{Error, Result};
use crate::nn::{
    deconv3d, deconv3d_backward, unpool3d, unpool3d_backward, upsample_nearest, upsample_nearest_adjoint, Activation,
    Conv3dLayer, Padding, PoolRecord,
};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub record_maps: usize,
    pub extent: [usize; 3],
    pub relu: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinerSpec {
    /// Score channels in and out of every stage.
    pub width: usize,
    pub stages: Vec<StageSpec>,
}

/// Which potential's scores are refined; the other path is upsampled by
/// nearest neighbour.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    None,
    Unary,
    #[default]
    Pairwise,
}

/// Mirrors the pooled stages of `net`; `input_maps` is the channel count
/// the net consumes. A net without pools yields an identity refiner.
pub fn build_refiner(net: &NetworkSpec, input_maps: usize) -> Result<RefinerSpec> {
    net.validate()?;
    let mut stages = Vec::new();
    let mut maps = input_maps;
    let mut extent = [1, 1, 1];
    for layer in &net.layers {
        match *layer {
            LayerSpec::Conv3d { kernels, extent: e, .. } => {
                maps = kernels;
                extent = e;
            }
            LayerSpec::MaxPool => stages.push(StageSpec {
                record_maps: maps,
                extent,
                relu: true,
            }),
            _ => {}
        }
    }
    stages.reverse();
    if let Some(last) = stages.last_mut() {
        last.relu = false;
    }
    Ok(RefinerSpec {
        width: net.classes(),
        stages,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefinerStage<T: Scalar = f32> {
    /// `(record_maps, 1, 1, 1, width)`; deconvolution maps width to record maps.
    pub lift: Conv3dLayer<T>,
    /// `(width, P, Q, R, record_maps)`; deconvolution maps record maps to width.
    pub deconv: Conv3dLayer<T>,
}

/// `[lift, deconv]` kernel gradients of one stage.
pub type StageGrads<T> = [Tensor<T>; 2];

#[derive(Clone, Debug, PartialEq)]
pub struct Refiner<T: Scalar = f32> {
    pub spec: RefinerSpec,
    pub stages: Vec<RefinerStage<T>>,
}

/// Intermediate values of one [`Refiner::refine_trace`] call, per stage:
/// input, lifted, unpooled and output tensors.
#[derive(Clone, Debug)]
pub struct RefineTrace<T: Scalar = f32> {
    pub stages: Vec<[Tensor<T>; 4]>,
}

impl<T: Scalar> RefineTrace<T> {
    pub fn output(&self) -> Option<&Tensor<T>> {
        self.stages.last().map(|s| &s[3])
    }
}

fn tent(n: usize, i: usize) -> f64 {
    let c = (n as f64 - 1.0) / 2.0;
    1.0 - (i as f64 - c).abs() / (c + 1.0)
}

impl<T: Scalar> Refiner<T> {
    /// Interpolating start: the lift copies score channel `c mod width` into
    /// record channel `c`; the deconvolution spreads each value with a tent
    /// over x and y and averages the copies back.
    pub fn init(spec: &RefinerSpec) -> Self {
        let w = spec.width;
        let stages = spec
            .stages
            .iter()
            .map(|s| {
                let r = s.record_maps;
                let lift = Tensor::from_fn([r, 1, 1, 1, w], |i| {
                    let (c, j) = (i / w, i % w);
                    T::from_f64(if c % w == j { 1.0 } else { 0.0 })
                });
                let [p, q, d] = s.extent;
                let copies = |c: usize| (0..r).filter(|k| k % w == c).count().max(1) as f64;
                let deconv = Tensor::from_fn([w, p, q, d, r], |i| {
                    let j = i % r;
                    let rest = i / r;
                    let (zz, rest) = (rest % d, rest / d);
                    let (yy, rest) = (rest % q, rest / q);
                    let (xx, c) = (rest % p, rest / p);
                    if j % w != c || zz != d / 2 {
                        return T::default();
                    }
                    T::from_f64(tent(p, xx) * tent(q, yy) / copies(c))
                });
                RefinerStage {
                    lift: Conv3dLayer {
                        kernels: lift,
                        biases: vec![T::default(); w],
                        activation: Activation::Identity,
                    },
                    deconv: Conv3dLayer {
                        kernels: deconv,
                        biases: vec![T::default(); r],
                        activation: if s.relu { Activation::Relu } else { Activation::Identity },
                    },
                }
            })
            .collect();
        Refiner {
            spec: spec.clone(),
            stages,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.stages.is_empty()
    }

    /// `records` in forward order, as produced by the paired net.
    pub fn refine_trace(&self, coarse: &Tensor<T>, records: &[PoolRecord<T>]) -> Result<RefineTrace<T>> {
        if records.len() != self.stages.len() {
            return Err(Error::invalid(format!(
                "refiner has {} stages but the net recorded {} pools",
                self.stages.len(),
                records.len()
            )));
        }
        let mut out = Vec::with_capacity(self.stages.len());
        let mut x = coarse.clone();
        for (stage, rec) in self.stages.iter().zip(records.iter().rev()) {
            let lifted = deconv3d(&x, &stage.lift, Padding::Same)?;
            let unpooled = unpool3d(rec, &lifted)?;
            let y = deconv3d(&unpooled, &stage.deconv, Padding::Same)?;
            out.push([x, lifted, unpooled, y.clone()]);
            x = y;
        }
        Ok(RefineTrace { stages: out })
    }

    pub fn refine(&self, coarse: &Tensor<T>, records: &[PoolRecord<T>]) -> Result<Tensor<T>> {
        let trace = self.refine_trace(coarse, records)?;
        Ok(trace.output().cloned().unwrap_or_else(|| coarse.clone()))
    }

    /// Kernel gradients per stage (`[lift, deconv]`) and the gradient with
    /// respect to the coarse input.
    pub fn backward(
        &self,
        trace: &RefineTrace<T>,
        records: &[PoolRecord<T>],
        grad_out: &Tensor<T>,
    ) -> Result<(Vec<StageGrads<T>>, Tensor<T>)> {
        let mut g = grad_out.clone();
        let mut grads = Vec::with_capacity(self.stages.len());
        for ((stage, t), rec) in self.stages.iter().zip(&trace.stages).rev().zip(records) {
            let [x, lifted, unpooled, y] = t;
            let d = deconv3d_backward(unpooled, &stage.deconv, Padding::Same, y, &g)?;
            let g_lifted = unpool3d_backward(rec, &d.input)?;
            let l = deconv3d_backward(x, &stage.lift, Padding::Same, lifted, &g_lifted)?;
            grads.push([l.kernels, d.kernels]);
            g = l.input;
        }
        grads.reverse();
        Ok((grads, g))
    }

    pub fn kernels(&self) -> Vec<&Tensor<T>> {
        self.stages
            .iter()
            .flat_map(|s| [&s.lift.kernels, &s.deconv.kernels])
            .collect()
    }

    pub fn kernels_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.stages
            .iter_mut()
            .flat_map(|s| [&mut s.lift.kernels, &mut s.deconv.kernels])
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> Refiner<U> {
        Refiner {
            spec: self.spec.clone(),
            stages: self
                .stages
                .iter()
                .map(|s| RefinerStage {
                    lift: Conv3dLayer {
                        kernels: s.lift.kernels.cast(),
                        biases: vec![U::default(); s.lift.out_maps()],
                        activation: s.lift.activation,
                    },
                    deconv: Conv3dLayer {
                        kernels: s.deconv.kernels.cast(),
                        biases: vec![U::default(); s.deconv.out_maps()],
                        activation: s.deconv.activation,
                    },
                })
                .collect(),
        }
    }

    /// Rebuilds a refiner from kernels in [`Self::kernels`] order.
    pub fn from_kernels(spec: &RefinerSpec, kernels: Vec<Tensor<T>>) -> Result<Self> {
        let mut r = Refiner::init(spec);
        if kernels.len() != r.stages.len() * 2 {
            return Err(Error::Corrupt(format!(
                "refiner expects {} kernels, found {}",
                r.stages.len() * 2,
                kernels.len()
            )));
        }
        for (slot, k) in r.kernels_mut().into_iter().zip(kernels) {
            k.expect_shape("refiner kernel", slot.shape())?;
            *slot = k;
        }
        Ok(r)
    }
}

/// Nearest-neighbour replacement for the refiner: undoes each pool by
/// replication.
pub fn upsample_through<T: Scalar>(coarse: &Tensor<T>, records: &[PoolRecord<T>]) -> Result<Tensor<T>> {
    let mut x = coarse.clone();
    for rec in records.iter().rev() {
        let mut shape = rec.input_shape.clone();
        shape[0] = x.shape()[0];
        x = upsample_nearest(&x, &shape)?;
    }
    Ok(x)
}

pub fn upsample_through_adjoint<T: Scalar>(fine: &Tensor<T>, records: &[PoolRecord<T>]) -> Result<Tensor<T>> {
    let mut g = fine.clone();
    for _ in records {
        g = upsample_nearest_adjoint(&g)?;
    }
    Ok(g)
}
