use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-voxel feature vectors on an `H x W x Z x C` grid, where `z` is the
/// band-group index. The flat layout is the group-major concatenation of
/// every pixel's per-group features.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    values: Tensor,
}

impl FeatureMap {
    pub fn new(values: Tensor) -> Result<Self> {
        values.expect_rank("feature map", 4)?;
        if !values.is_finite() {
            return Err(Error::NonFinite {
                stage: "feature map",
                iteration: 0,
            });
        }
        Ok(FeatureMap { values })
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn height(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn depth(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[3]
    }

    pub fn voxel(&self, x: usize, y: usize, z: usize) -> &[f32] {
        let c = self.channels();
        let start = ((x * self.width() + y) * self.depth() + z) * c;
        &self.values.data()[start..start + c]
    }

    /// The same values as a `(C, H, W, Z)` tensor for the potential nets.
    pub fn to_maps(&self) -> Tensor {
        let (h, w, z, c) = (self.height(), self.width(), self.depth(), self.channels());
        let src = self.values.data();
        let mut out = vec![0.0f32; src.len()];
        for (v, chunk) in src.chunks_exact(c).enumerate() {
            for (ch, &val) in chunk.iter().enumerate() {
                out[ch * h * w * z + v] = val;
            }
        }
        Tensor::new([c, h, w, z], out).unwrap()
    }

    pub fn crop(&self, x0: usize, y0: usize, height: usize, width: usize) -> Result<FeatureMap> {
        if x0 + height > self.height() || y0 + width > self.width() || height == 0 || width == 0 {
            return Err(Error::invalid(format!(
                "crop {height}x{width} at ({x0},{y0}) exceeds {}x{}",
                self.height(),
                self.width()
            )));
        }
        let row = self.depth() * self.channels();
        let mut out = Vec::with_capacity(height * width * row);
        for x in x0..x0 + height {
            let start = (x * self.width() + y0) * row;
            out.extend_from_slice(&self.values.data()[start..start + width * row]);
        }
        FeatureMap::new(Tensor::new([height, width, self.depth(), self.channels()], out)?)
    }

    /// `max - min` over every stored value.
    pub fn range(&self) -> f64 {
        let (lo, hi) = self
            .values
            .data()
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        (hi - lo) as f64
    }
}
