use super::graph::{gaussian_edge_weights, CrfGraph, KernelParams};
use super::inference::{mean_field_with_weights, MarginalField, MeanFieldConfig};
use super::potentials::PotentialNets;
use crate::cnn::argmax;
use crate::data::LabelMap;
use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct Segmentation {
    pub labels: LabelMap,
    pub marginals: MarginalField,
    pub iterations: usize,
}

/// Per-pixel majority vote over the spectral index `z`. Ties go to the
/// label with the larger summed marginal, then to the lower label.
pub fn collapse_voxels(graph: &CrfGraph, q: &MarginalField) -> Result<LabelMap> {
    let (h, w, d, k) = (graph.height(), graph.width(), graph.depth(), graph.labels);
    let mut labels = Vec::with_capacity(h * w);
    let mut votes = vec![0usize; k];
    let mut mass = vec![0.0f64; k];
    for x in 0..h {
        for y in 0..w {
            votes.fill(0);
            mass.fill(0.0);
            for z in 0..d {
                let row = q.row(graph.node(x, y, z));
                votes[argmax(row)] += 1;
                for (m, v) in mass.iter_mut().zip(row) {
                    *m += v;
                }
            }
            let mut best = 0;
            for l in 1..k {
                if votes[l] > votes[best] || (votes[l] == votes[best] && mass[l] > mass[best]) {
                    best = l;
                }
            }
            labels.push(best as u16 + 1);
        }
    }
    LabelMap::new(h, w, labels)
}

/// Potentials from the nets, mean-field inference, then the voxel-to-pixel
/// collapse.
pub fn segment(
    graph: &CrfGraph,
    nets: &PotentialNets,
    kp: &KernelParams,
    mf: &MeanFieldConfig,
) -> Result<Segmentation> {
    let pot = nets.evaluate(graph)?;
    let weights = gaussian_edge_weights(graph, kp)?;
    let (marginals, iterations) = mean_field_with_weights(graph, &pot.phi, &pot.psi, &weights, mf)?;
    Ok(Segmentation {
        labels: collapse_voxels(graph, &marginals)?,
        marginals,
        iterations,
    })
}
