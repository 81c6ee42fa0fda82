//! Band-group 3D CNNs: architecture presets, training, pixel classification
//! and the voxel feature map handed to the CRF.

mod checkpoint;
mod features;
mod network;
mod spec;
mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_network, write_network};
pub use features::FeatureMap;
pub use network::{Layer, NetworkParams, Trace};
pub use spec::{LayerSpec, NetworkSpec, Topology};
pub(crate) use train::argmax;
pub use train::{
    classify_pixels, dense_pass, extract_feature_map, sample_gradient, train_group_cnns, train_network, DensePass,
    GroupModels, LossCurve,
};
