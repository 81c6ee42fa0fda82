use std::collections::BTreeMap;

use log::{debug, info};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::features::FeatureMap;
use super::network::NetworkParams;
use super::spec::{NetworkSpec, Topology};
use crate::data::{patch_at, BandGroupSet, BandStats, HyperCube, LabelMap, LabeledPatch};
use crate::error::{Error, Result};
use crate::nn::{softmax, softmax_cross_entropy, SgdConfig};
use crate::rng;
use crate::tensor::{Scalar, Tensor};

/// Mean per-sample loss per epoch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossCurve {
    pub train: Vec<f64>,
    pub val: Vec<f64>,
}

impl LossCurve {
    /// `epoch,train_loss,val_loss` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss\n");
        for (e, t) in self.train.iter().enumerate() {
            let v = self.val.get(e).copied().unwrap_or(f64::NAN);
            s.push_str(&format!("{},{t:.9},{v:.9}\n", e + 1));
        }
        s
    }
}

/// Trained classifiers for every band group plus what is needed to apply
/// them to a cube.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupModels {
    pub spec: NetworkSpec,
    pub groups: BandGroupSet,
    pub patch: (usize, usize),
    /// Standardisation applied to the cube before patches are cut.
    pub stats: BandStats,
    pub params: BTreeMap<usize, NetworkParams>,
}

fn as_input(patch: &LabeledPatch) -> Result<Tensor> {
    let mut shape = vec![1];
    shape.extend_from_slice(patch.data.shape());
    patch.data.clone().reshape(shape)
}

fn target(label: u16, classes: usize) -> Result<usize> {
    let t = label as usize;
    if t == 0 || t > classes {
        return Err(Error::invalid(format!("label {label} outside 1..={classes}")));
    }
    Ok(t - 1)
}

/// Cross-entropy loss and parameter gradient of one sample.
pub fn sample_gradient<T: Scalar>(
    params: &NetworkParams<T>,
    spec: &NetworkSpec,
    input: &Tensor<T>,
    class_index: usize,
) -> Result<(f64, NetworkParams<T>)> {
    let trace = params.forward_trace(spec, input)?;
    let logits: Vec<f64> = trace.output().data().iter().map(|v| v.to_f64()).collect();
    let (loss, g) = softmax_cross_entropy(&logits, class_index)?;
    let g = Tensor::new(trace.output().shape(), g.into_iter().map(T::from_f64).collect())?;
    let (grads, _) = params.backward(spec, &trace, &g)?;
    Ok((loss, grads))
}

fn mean_loss(params: &NetworkParams, spec: &NetworkSpec, samples: &[(Tensor, usize)]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(f64::NAN);
    }
    let losses = samples
        .par_iter()
        .map(|(x, t)| {
            let logits: Vec<f64> = params.forward(spec, x)?.data().iter().map(|&v| v as f64).collect();
            Ok(softmax_cross_entropy(&logits, *t)?.0)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / samples.len() as f64)
}

/// Mini-batch gradient descent on one group's samples. The batch gradient is
/// the mean of the per-sample gradients.
pub fn train_network(
    spec: &NetworkSpec,
    train: &[(Tensor, usize)],
    val: &[(Tensor, usize)],
    sgd: &SgdConfig,
    stream: u64,
) -> Result<(NetworkParams, LossCurve)> {
    sgd.validate()?;
    let first = train.first().ok_or_else(|| Error::invalid("no training samples"))?;
    let mut rng = rng::substream(sgd.seed, stream);
    let mut params = NetworkParams::init(spec, first.0.shape(), &mut rng)?;
    let mut curve = LossCurve::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..sgd.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(sgd.batch_size) {
            let results = batch
                .par_iter()
                .map(|&i| sample_gradient(&params, spec, &train[i].0, train[i].1))
                .collect::<Result<Vec<_>>>()?;
            let mut sum = params.zeros_like();
            for (loss, g) in &results {
                total += loss;
                sum.add_assign(g)?;
            }
            sum.scale(1.0 / batch.len() as f64);
            params.apply_gradient(&sum, sgd.learning_rate)?;
        }
        let train_loss = total / train.len() as f64;
        if !train_loss.is_finite() || !params.is_finite() {
            return Err(Error::Divergence {
                stage: format!("{} (stream {stream})", spec.name),
                epoch: epoch + 1,
                loss: train_loss,
            });
        }
        let val_loss = mean_loss(&params, spec, val)?;
        debug!(
            "{} stream {stream} epoch {}: train {train_loss:.5} val {val_loss:.5}",
            spec.name,
            epoch + 1
        );
        curve.train.push(train_loss);
        curve.val.push(val_loss);
    }
    Ok((params, curve))
}

/// Trains one classifier per band group present in `train`.
pub fn train_group_cnns(
    train: &[LabeledPatch],
    val: &[LabeledPatch],
    spec: &NetworkSpec,
    sgd: &SgdConfig,
) -> Result<(BTreeMap<usize, NetworkParams>, BTreeMap<usize, LossCurve>)> {
    if spec.topology != Topology::Classifier {
        return Err(Error::invalid("band-group CNNs must use the classifier topology"));
    }
    let classes = spec.classes();
    type Split = (Vec<(Tensor, usize)>, Vec<(Tensor, usize)>);
    let mut by_group: BTreeMap<usize, Split> = BTreeMap::new();
    for p in train {
        by_group
            .entry(p.group_index)
            .or_default()
            .0
            .push((as_input(p)?, target(p.label, classes)?));
    }
    for p in val {
        if let Some(e) = by_group.get_mut(&p.group_index) {
            e.1.push((as_input(p)?, target(p.label, classes)?));
        }
    }
    let trained = by_group
        .into_par_iter()
        .map(|(g, (t, v))| {
            info!(
                "training band group {g} on {} samples ({} validation)",
                t.len(),
                v.len()
            );
            train_network(spec, &t, &v, sgd, g as u64).map(|r| (g, r))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut params = BTreeMap::new();
    let mut curves = BTreeMap::new();
    for (g, (p, c)) in trained {
        params.insert(g, p);
        curves.insert(g, c);
    }
    Ok((params, curves))
}

/// Per-pixel posteriors averaged over groups, and the fused feature map.
#[derive(Clone, Debug, PartialEq)]
pub struct DensePass {
    pub labels: LabelMap,
    /// `H x W x K` class posteriors.
    pub posteriors: Vec<f64>,
    pub features: FeatureMap,
}

/// Applies every group classifier at every pixel.
pub fn dense_pass(cube: &HyperCube, models: &GroupModels) -> Result<DensePass> {
    let g_count = models.groups.len();
    for g in 0..g_count {
        if !models.params.contains_key(&g) {
            return Err(Error::MissingGroup(g));
        }
    }
    if models.groups.total_bands() != cube.bands() {
        return Err(Error::shape(
            "dense_pass",
            &[models.groups.total_bands()],
            &[cube.bands()],
        ));
    }
    let cube = &models.stats.apply(cube)?;
    let k = models.spec.classes();
    let (h, w) = (cube.height(), cube.width());
    let per_pixel = (0..h * w)
        .into_par_iter()
        .map(|i| {
            let (x, y) = (i / w, i % w);
            let mut post = vec![0.0f64; k];
            let mut feats = Vec::new();
            for (g, range) in models.groups.groups.iter().enumerate() {
                let patch = patch_at(cube, range.clone(), (x, y), models.patch)?;
                let mut shape = vec![1];
                shape.extend_from_slice(patch.shape());
                let trace = models.params[&g].forward_trace(&models.spec, &patch.reshape(shape)?)?;
                let logits: Vec<f64> = trace.output().data().iter().map(|&v| v as f64).collect();
                for (p, q) in post.iter_mut().zip(softmax(&logits)?) {
                    *p += q / g_count as f64;
                }
                feats.extend_from_slice(trace.penultimate().data());
            }
            Ok((post, feats))
        })
        .collect::<Result<Vec<_>>>()?;
    let c = per_pixel.first().map_or(0, |p| p.1.len() / g_count);
    let mut labels = Vec::with_capacity(h * w);
    let mut posteriors = Vec::with_capacity(h * w * k);
    let mut features = Vec::with_capacity(h * w * g_count * c);
    for (post, feats) in per_pixel {
        labels.push(argmax(&post) as u16 + 1);
        posteriors.extend(post);
        features.extend(feats);
    }
    Ok(DensePass {
        labels: LabelMap::new(h, w, labels)?,
        posteriors,
        features: FeatureMap::new(Tensor::new([h, w, g_count, c], features)?)?,
    })
}

/// First index of the maximum.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn classify_pixels(cube: &HyperCube, models: &GroupModels) -> Result<(LabelMap, Vec<f64>)> {
    let pass = dense_pass(cube, models)?;
    Ok((pass.labels, pass.posteriors))
}

pub fn extract_feature_map(cube: &HyperCube, models: &GroupModels) -> Result<FeatureMap> {
    Ok(dense_pass(cube, models)?.features)
}
