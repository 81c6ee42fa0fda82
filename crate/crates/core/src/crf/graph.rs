use serde::{Deserialize, Serialize};

use crate::cnn::FeatureMap;
use crate::error::{Error, Result};

/// Voxel nodes of a feature map joined by 4-connected edges inside each
/// spectral slice. Node `(x, y, z)` has index `(x * W + y) * Z + z`. All
/// horizontal edges `(x, y) - (x, y + 1)` come first, then all vertical
/// edges `(x, y) - (x + 1, y)`, each block in node order.
#[derive(Clone, Debug, PartialEq)]
pub struct CrfGraph {
    pub labels: usize,
    pub edges: Vec<(usize, usize)>,
    pub features: FeatureMap,
    /// Values compared by the appearance kernel; defaults to `features`.
    pub spectra: Option<FeatureMap>,
}

impl CrfGraph {
    pub fn height(&self) -> usize {
        self.features.height()
    }

    pub fn width(&self) -> usize {
        self.features.width()
    }

    pub fn depth(&self) -> usize {
        self.features.depth()
    }

    pub fn nodes(&self) -> usize {
        self.height() * self.width() * self.depth()
    }

    pub fn node(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.width() + y) * self.depth() + z
    }

    pub fn coords(&self, node: usize) -> (usize, usize, usize) {
        let z = node % self.depth();
        let rest = node / self.depth();
        (rest / self.width(), rest % self.width(), z)
    }

    pub fn horizontal_edges(&self) -> usize {
        self.height() * self.width().saturating_sub(1) * self.depth()
    }

    /// `(edge, other node, node is the first endpoint)` for every node.
    pub fn adjacency(&self) -> Vec<Vec<(usize, usize, bool)>> {
        let mut adj = vec![Vec::with_capacity(4); self.nodes()];
        for (e, &(p, q)) in self.edges.iter().enumerate() {
            adj[p].push((e, q, true));
            adj[q].push((e, p, false));
        }
        adj
    }

    fn spectral_values(&self) -> &FeatureMap {
        self.spectra.as_ref().unwrap_or(&self.features)
    }
}

pub fn build_graph(fm: &FeatureMap, labels: usize) -> Result<CrfGraph> {
    if labels < 2 {
        return Err(Error::invalid(format!("a CRF needs at least 2 labels, got {labels}")));
    }
    let (h, w, d) = (fm.height(), fm.width(), fm.depth());
    let node = |x: usize, y: usize, z: usize| (x * w + y) * d + z;
    let mut edges = Vec::with_capacity(d * (h * w.saturating_sub(1) + w * h.saturating_sub(1)));
    for x in 0..h {
        for y in 0..w.saturating_sub(1) {
            for z in 0..d {
                edges.push((node(x, y, z), node(x, y + 1, z)));
            }
        }
    }
    for x in 0..h.saturating_sub(1) {
        for y in 0..w {
            for z in 0..d {
                edges.push((node(x, y, z), node(x + 1, y, z)));
            }
        }
    }
    Ok(CrfGraph {
        labels,
        edges,
        features: fm.clone(),
        spectra: None,
    })
}

/// What the appearance kernel compares between neighbouring voxels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectralSource {
    #[default]
    Features,
    Intensities,
}

/// Weights and bandwidths of the smoothness and appearance kernels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub w1: f64,
    pub w2: f64,
    pub theta_alpha: [f64; 2],
    pub theta_gamma: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        KernelParams {
            w1: 1.0,
            w2: 1.0,
            theta_alpha: [3.0, 3.0],
            theta_gamma: 1.0,
        }
    }
}

impl KernelParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.w1 >= 0.0
            && self.w2 >= 0.0
            && self.theta_alpha.iter().all(|&t| t > 0.0)
            && self.theta_gamma > 0.0
            && [self.w1, self.w2, self.theta_gamma].iter().all(|v| v.is_finite());
        if !ok {
            return Err(Error::invalid(format!("invalid kernel parameters {self:?}")));
        }
        Ok(())
    }

    /// `w1 exp(-s) + w2 exp(-s - a)` with `s` the bandwidth-scaled spatial
    /// distance and `a` the bandwidth-scaled appearance distance.
    pub fn weight(&self, spatial_delta: [f64; 2], appearance_delta: &[f64]) -> f64 {
        let s: f64 = spatial_delta
            .iter()
            .zip(&self.theta_alpha)
            .map(|(d, t)| d * d / (2.0 * t * t))
            .sum();
        let a: f64 = appearance_delta.iter().map(|d| d * d).sum::<f64>() / (2.0 * self.theta_gamma * self.theta_gamma);
        self.w1 * (-s).exp() + self.w2 * (-s - a).exp()
    }
}

pub fn gaussian_edge_weights(graph: &CrfGraph, kp: &KernelParams) -> Result<Vec<f64>> {
    kp.validate()?;
    let spectra = graph.spectral_values();
    let mut diff = Vec::new();
    Ok(graph
        .edges
        .iter()
        .map(|&(p, q)| {
            let (px, py, pz) = graph.coords(p);
            let (qx, qy, qz) = graph.coords(q);
            let (a, b) = (spectra.voxel(px, py, pz), spectra.voxel(qx, qy, qz));
            diff.clear();
            diff.extend(a.iter().zip(b).map(|(u, v)| (*u - *v) as f64));
            kp.weight([qx as f64 - px as f64, qy as f64 - py as f64], &diff)
        })
        .collect())
}
