//! Fixed inputs for the kernel benchmarks.

use hyperseg_core::cnn::FeatureMap;
use hyperseg_core::crf::{build_graph, potts, CrfGraph};
use hyperseg_core::nn::{Activation, Conv3dLayer};
use hyperseg_core::Tensor;

fn wave(i: usize, f: f64) -> f64 {
    (i as f64 * f).sin()
}

/// A full-size layer: 32 kernels of 5x5x5 over `maps` input maps.
pub fn full_layer(maps: usize) -> Conv3dLayer {
    let kernels = Tensor::from_fn([maps, 5, 5, 5, 32], |i| 0.05 * wave(i, 0.37) as f32);
    Conv3dLayer::new(kernels, vec![0.01; 32], Activation::Relu).unwrap()
}

/// A `(maps, m, m, bands)` input volume.
pub fn volume(maps: usize, m: usize, bands: usize) -> Tensor {
    Tensor::from_fn([maps, m, m, bands], |i| wave(i, 0.11) as f32)
}

/// A grid graph with smooth features, and unary and Potts pairwise tables.
pub fn crf_problem(side: usize, depth: usize, labels: usize) -> (CrfGraph, Vec<f64>, Vec<f64>) {
    let fm = FeatureMap::new(Tensor::from_fn([side, side, depth, 4], |i| wave(i, 0.013) as f32)).unwrap();
    let graph = build_graph(&fm, labels).unwrap();
    let phi = (0..graph.nodes() * labels).map(|i| 1.0 + wave(i, 0.7)).collect();
    let mu = potts::<f64>(labels);
    let psi = (0..graph.edges.len()).flat_map(|_| mu.data().to_vec()).collect();
    (graph, phi, psi)
}
