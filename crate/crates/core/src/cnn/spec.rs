use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, Padding};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv3d {
        kernels: usize,
        extent: [usize; 3],
        activation: Activation,
    },
    MaxPool,
    FullyConnected {
        units: usize,
    },
    Softmax {
        classes: usize,
    },
}

/// `Classifier` maps one patch to one score vector through dense layers.
/// `FullyConvolutional` keeps the spatial grid and realises the dense layers
/// as 1x1x1 convolutions, one score vector per voxel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Classifier,
    FullyConvolutional,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    pub padding: Padding,
    pub topology: Topology,
    pub layers: Vec<LayerSpec>,
}

const FULL_KERNELS: usize = 32;
const FULL_EXTENT: [usize; 3] = [5, 5, 5];
const FULL_HIDDEN: usize = 64;

fn stack(
    name: &str,
    topology: Topology,
    padding: Padding,
    convs: &[(usize, [usize; 3], bool)],
    hidden: Option<usize>,
    classes: usize,
) -> NetworkSpec {
    let mut layers = Vec::new();
    for &(kernels, extent, pool) in convs {
        layers.push(LayerSpec::Conv3d {
            kernels,
            extent,
            activation: Activation::Relu,
        });
        if pool {
            layers.push(LayerSpec::MaxPool);
        }
    }
    if let Some(units) = hidden {
        layers.push(LayerSpec::FullyConnected { units });
    }
    layers.push(LayerSpec::Softmax { classes });
    NetworkSpec {
        name: name.to_string(),
        padding,
        topology,
        layers,
    }
}

fn full_stack(pools: &[usize], count: usize) -> Vec<(usize, [usize; 3], bool)> {
    (1..=count)
        .map(|l| (FULL_KERNELS, FULL_EXTENT, pools.contains(&l)))
        .collect()
}

impl NetworkSpec {
    /// Named architectures. The `*-cls` presets classify patches, the
    /// `*-seg` presets are the fully convolutional potential nets. The
    /// `desk-*` presets are small enough for a single-core laptop run.
    pub fn preset(name: &str, classes: usize) -> Result<Self> {
        use Topology::*;
        let same = Padding::Same;
        let spec = match name {
            "indian-pines-cls" => stack(
                name,
                Classifier,
                same,
                &full_stack(&[1, 2, 5, 7], 7),
                Some(FULL_HIDDEN),
                classes,
            ),
            "pavia-cls" | "griffith-cls" => stack(
                name,
                Classifier,
                same,
                &full_stack(&[1, 2, 5], 6),
                Some(FULL_HIDDEN),
                classes,
            ),
            "indian-pines-seg" => stack(
                name,
                FullyConvolutional,
                same,
                &full_stack(&[1, 4], 4),
                Some(FULL_HIDDEN),
                classes,
            ),
            "pavia-seg" => stack(
                name,
                FullyConvolutional,
                same,
                &full_stack(&[1, 3], 3),
                Some(FULL_HIDDEN),
                classes,
            ),
            "griffith-seg" => stack(
                name,
                FullyConvolutional,
                same,
                &full_stack(&[1], 3),
                Some(FULL_HIDDEN),
                classes,
            ),
            "desk-cls" => stack(
                name,
                Classifier,
                Padding::Valid,
                &[(4, [3, 3, 5], true), (8, [3, 3, 3], false)],
                Some(8),
                classes,
            ),
            "desk-seg" => stack(
                name,
                FullyConvolutional,
                same,
                &[(8, [3, 3, 3], true), (8, [3, 3, 3], false)],
                None,
                classes,
            ),
            _ => return Err(Error::UnknownPreset(name.to_string())),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let convs = self
            .layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::Conv3d { .. }))
            .count();
        if convs == 0 {
            return Err(Error::invalid(format!("network {:?} has no conv3d layer", self.name)));
        }
        match self.layers.last() {
            Some(LayerSpec::Softmax { classes }) if *classes >= 1 => {}
            _ => {
                return Err(Error::invalid(format!(
                    "network {:?} must end in a softmax layer",
                    self.name
                )))
            }
        }
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                LayerSpec::Softmax { .. } if i + 1 != self.layers.len() => {
                    return Err(Error::invalid("softmax must be the last layer"));
                }
                LayerSpec::Conv3d { kernels, extent, .. } => {
                    if *kernels == 0 || extent.contains(&0) {
                        return Err(Error::invalid(format!("layer {i}: empty convolution")));
                    }
                    if self.padding == Padding::Same && (extent[0] % 2 == 0 || extent[1] % 2 == 0) {
                        return Err(Error::invalid(format!(
                            "layer {i}: same padding needs odd spatial extents, got {extent:?}"
                        )));
                    }
                }
                LayerSpec::FullyConnected { units: 0 } => {
                    return Err(Error::invalid(format!("layer {i}: zero-width dense layer")));
                }
                _ => {}
            }
        }
        let mut seen_dense = false;
        for layer in &self.layers {
            match layer {
                LayerSpec::FullyConnected { .. } => seen_dense = true,
                LayerSpec::Conv3d { .. } | LayerSpec::MaxPool if seen_dense => {
                    return Err(Error::invalid("spatial layers cannot follow a dense layer"));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        match self.layers.last() {
            Some(LayerSpec::Softmax { classes }) => *classes,
            _ => 0,
        }
    }

    /// Copy of this spec with a different score width.
    pub fn with_classes(&self, classes: usize) -> Self {
        let mut spec = self.clone();
        if let Some(LayerSpec::Softmax { classes: c }) = spec.layers.last_mut() {
            *c = classes;
        }
        spec
    }

    pub fn pool_count(&self) -> usize {
        self.layers.iter().filter(|l| matches!(l, LayerSpec::MaxPool)).count()
    }

    /// 1-based conv layer numbers that are followed by a pool.
    pub fn pooled_convs(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut conv = 0;
        for l in &self.layers {
            match l {
                LayerSpec::Conv3d { .. } => conv += 1,
                LayerSpec::MaxPool => out.push(conv),
                _ => {}
            }
        }
        out
    }

    pub fn conv_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::Conv3d { .. }))
            .count()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: NetworkSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }
}
