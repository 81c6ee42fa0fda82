use std::collections::BTreeMap;

use log::warn;
use rand::seq::SliceRandom;

use super::cube::{LabelMap, UNLABELED};
use super::patches::LabeledPatch;
use crate::error::{Error, Result};
use crate::rng;

pub trait HasLabel {
    fn label(&self) -> u16;
}

impl HasLabel for LabeledPatch {
    fn label(&self) -> u16 {
        self.label
    }
}

impl HasLabel for u16 {
    fn label(&self) -> u16 {
        *self
    }
}

/// Stratified seeded split: each class contributes `round(n * fraction)`
/// samples to train (at least one to each side when it has two or more).
/// Output is grouped by ascending class, shuffled within each class.
pub fn split_train_val<S: HasLabel + Clone>(samples: &[S], fraction: f64, seed: u64) -> Result<(Vec<S>, Vec<S>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let mut by_class: BTreeMap<u16, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        by_class.entry(s.label()).or_default().push(i);
    }
    let mut rng = rng::seeded(seed);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (class, mut idx) in by_class {
        let n = idx.len();
        if n < 2 {
            warn!("class {class} has {n} sample(s); all go to the training split");
            train.extend(idx.iter().map(|&i| samples[i].clone()));
            continue;
        }
        idx.shuffle(&mut rng);
        let cut = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
        train.extend(idx[..cut].iter().map(|&i| samples[i].clone()));
        val.extend(idx[cut..].iter().map(|&i| samples[i].clone()));
    }
    Ok((train, val))
}

/// Draws up to `per_class` labeled pixels of every class for training and
/// returns `(train, test)` maps; the test map holds every other labeled
/// pixel.
pub fn sample_training_pixels(truth: &LabelMap, per_class: usize, seed: u64) -> Result<(LabelMap, LabelMap)> {
    if per_class == 0 {
        return Err(Error::invalid("samples per class must be at least 1"));
    }
    let mut by_class: BTreeMap<u16, Vec<usize>> = BTreeMap::new();
    for (i, &l) in truth.labels().iter().enumerate() {
        if l != UNLABELED {
            by_class.entry(l).or_default().push(i);
        }
    }
    if by_class.is_empty() {
        return Err(Error::NoLabeledPixels);
    }
    let mut rng = rng::seeded(seed);
    let mut train = LabelMap::unlabeled(truth.height(), truth.width());
    let mut test = truth.clone();
    for (class, mut idx) in by_class {
        idx.shuffle(&mut rng);
        for &i in idx.iter().take(per_class) {
            train.labels_mut()[i] = class;
            test.labels_mut()[i] = UNLABELED;
        }
    }
    Ok((train, test))
}
