//! Conditional random field over feature-map voxels with CNN potentials,
//! piecewise training and mean-field decoding.

mod graph;
mod inference;
mod potentials;
mod segment;
mod train;

pub use graph::{build_graph, gaussian_edge_weights, CrfGraph, KernelParams, SpectralSource};
pub use inference::{
    energy, exact_infer_oracle, exact_with_weights, mean_field_infer, mean_field_with_weights, MarginalField,
    MeanFieldConfig, MAX_LABELINGS,
};
pub use potentials::{local_probabilities, potts, PotentialGrads, PotentialNets, PotentialTrace, Potentials};
pub use segment::{collapse_voxels, segment, Segmentation};
pub use train::{piecewise_loss, piecewise_loss_and_grad, piecewise_train, TrainingGraph};
