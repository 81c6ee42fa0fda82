use serde::{Deserialize, Serialize};

use super::cube::HyperCube;
use crate::error::{Error, Result};

/// Per-band mean and standard deviation used to standardise a cube.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl BandStats {
    pub fn measure(cube: &HyperCube) -> Self {
        let b = cube.bands();
        let mut sum = vec![0.0f64; b];
        let mut sq = vec![0.0f64; b];
        for px in cube.values().chunks_exact(b) {
            for (i, &v) in px.iter().enumerate() {
                sum[i] += v as f64;
                sq[i] += (v as f64).powi(2);
            }
        }
        let n = (cube.height() * cube.width()) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / n - m * m).max(0.0);
                if var > 1e-24 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        BandStats { mean, std }
    }

    pub fn identity(bands: usize) -> Self {
        BandStats {
            mean: vec![0.0; bands],
            std: vec![1.0; bands],
        }
    }

    /// `(v - mean) / std` per band.
    pub fn apply(&self, cube: &HyperCube) -> Result<HyperCube> {
        let b = cube.bands();
        if self.mean.len() != b || self.std.len() != b {
            return Err(Error::shape("band stats", &[self.mean.len()], &[b]));
        }
        let values = cube
            .values()
            .chunks_exact(b)
            .flat_map(|px| {
                px.iter()
                    .enumerate()
                    .map(|(i, &v)| ((v as f64 - self.mean[i]) / self.std[i]) as f32)
            })
            .collect();
        HyperCube::new(cube.height(), cube.width(), b, values)
    }
}
