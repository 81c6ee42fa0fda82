use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::patches::LabeledPatch;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub alpha_low: f64,
    pub alpha_high: f64,
    /// Noise standard deviation as a fraction of each band's dynamic range.
    pub beta_sigma: f64,
    pub geometric: bool,
    /// Virtual samples fused per real training sample.
    pub virtual_per_sample: usize,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            alpha_low: 0.7,
            alpha_high: 1.0,
            beta_sigma: 0.01,
            geometric: true,
            virtual_per_sample: 1,
            seed: 42,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.alpha_low && self.alpha_low <= self.alpha_high && self.alpha_high <= 1.0) {
            return Err(Error::invalid(format!(
                "need 0 <= alpha_low <= alpha_high <= 1, got [{}, {}]",
                self.alpha_low, self.alpha_high
            )));
        }
        if !(self.beta_sigma >= 0.0 && self.beta_sigma.is_finite()) {
            return Err(Error::invalid(format!(
                "beta_sigma must be >= 0, got {}",
                self.beta_sigma
            )));
        }
        Ok(())
    }
}

/// `y = a * x_i + (1 - a) * x_j + b` with one `a` per sample and i.i.d.
/// Gaussian `b` scaled by the per-band range of the two parents.
pub fn fuse_virtual_sample<R: Rng + ?Sized>(
    x_i: &LabeledPatch,
    x_j: &LabeledPatch,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<LabeledPatch> {
    cfg.validate()?;
    if x_i.label != x_j.label {
        return Err(Error::invalid(format!(
            "virtual sample parents have labels {} and {}",
            x_i.label, x_j.label
        )));
    }
    if x_i.group_index != x_j.group_index {
        return Err(Error::invalid(format!(
            "virtual sample parents come from groups {} and {}",
            x_i.group_index, x_j.group_index
        )));
    }
    x_j.data.expect_shape("fuse_virtual_sample", x_i.data.shape())?;
    let alpha = if cfg.alpha_low == cfg.alpha_high {
        cfg.alpha_low
    } else {
        rng.random_range(cfg.alpha_low..=cfg.alpha_high)
    };
    let bands = *x_i.data.shape().last().unwrap();
    let (a, b) = (x_i.data.data(), x_j.data.data());
    let mut lo = vec![f32::INFINITY; bands];
    let mut hi = vec![f32::NEG_INFINITY; bands];
    for (k, (&u, &v)) in a.iter().zip(b).enumerate() {
        let l = k % bands;
        lo[l] = lo[l].min(u.min(v));
        hi[l] = hi[l].max(u.max(v));
    }
    let mut out = Vec::with_capacity(a.len());
    for (k, (&u, &v)) in a.iter().zip(b).enumerate() {
        let mut y = alpha * u as f64 + (1.0 - alpha) * v as f64;
        let sigma = cfg.beta_sigma * (hi[k % bands] - lo[k % bands]) as f64;
        if sigma > 0.0 {
            y += Normal::new(0.0, sigma).unwrap().sample(rng);
        }
        out.push(y as f32);
    }
    Ok(LabeledPatch {
        data: Tensor::new(x_i.data.shape(), out)?,
        center: x_i.center,
        group_index: x_i.group_index,
        label: x_i.label,
    })
}

fn transform(patch: &Tensor, f: impl Fn(usize, usize, usize) -> (usize, usize)) -> Tensor {
    let s = patch.shape();
    let (n, l) = (s[0], s[2]);
    let src = patch.data();
    let mut out = Vec::with_capacity(src.len());
    for i in 0..n {
        for j in 0..n {
            let (si, sj) = f(i, j, n);
            out.extend_from_slice(&src[(si * n + sj) * l..(si * n + sj + 1) * l]);
        }
    }
    Tensor::new(s, out).unwrap()
}

fn rotate90(t: &Tensor) -> Tensor {
    transform(t, |i, j, n| (n - 1 - j, i))
}

fn flip(t: &Tensor) -> Tensor {
    transform(t, |i, j, n| (i, n - 1 - j))
}

/// The 7 non-identity elements of the square's symmetry group: three
/// rotations, then the horizontal flip composed with 0, 90, 180 and 270
/// degree rotations.
pub fn geometric_augment(patch: &LabeledPatch) -> Result<Vec<LabeledPatch>> {
    let s = patch.data.shape();
    if s.len() != 3 || s[0] != s[1] {
        return Err(Error::invalid(format!(
            "geometric augmentation needs a square patch, got {s:?}"
        )));
    }
    let mut variants = Vec::with_capacity(7);
    let mut r = patch.data.clone();
    for _ in 0..3 {
        r = rotate90(&r);
        variants.push(r.clone());
    }
    let mut f = flip(&patch.data);
    for _ in 0..4 {
        variants.push(f.clone());
        f = rotate90(&f);
    }
    Ok(variants
        .into_iter()
        .map(|data| LabeledPatch { data, ..patch.clone() })
        .collect())
}

/// Real patches, plus `virtual_per_sample` fused samples per real patch, plus
/// the 7 geometric variants of each of those when enabled. Partners are
/// drawn from the same class and band group.
pub fn augment_training_set(real: &[LabeledPatch], cfg: &AugmentConfig) -> Result<Vec<LabeledPatch>> {
    cfg.validate()?;
    let mut rng = crate::rng::seeded(cfg.seed);
    let mut base = real.to_vec();
    for (i, p) in real.iter().enumerate() {
        let partners: Vec<usize> = real
            .iter()
            .enumerate()
            .filter(|(j, q)| *j != i && q.label == p.label && q.group_index == p.group_index)
            .map(|(j, _)| j)
            .collect();
        if partners.is_empty() {
            continue;
        }
        for _ in 0..cfg.virtual_per_sample {
            let j = partners[rng.random_range(0..partners.len())];
            base.push(fuse_virtual_sample(p, &real[j], cfg, &mut rng)?);
        }
    }
    if !cfg.geometric {
        return Ok(base);
    }
    let mut out = Vec::with_capacity(base.len() * 8);
    for p in base {
        let variants = geometric_augment(&p)?;
        out.push(p);
        out.extend(variants);
    }
    Ok(out)
}
