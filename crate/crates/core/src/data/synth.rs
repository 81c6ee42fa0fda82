use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::cube::{HyperCube, LabelMap};
use crate::error::{Error, Result};
use crate::rng;

/// Parameters of a synthetic scene: Voronoi regions, one smooth spectral
/// signature per class, additive Gaussian pixel noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub num_classes: usize,
    pub blob_count: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            height: 64,
            width: 64,
            bands: 40,
            num_classes: 3,
            blob_count: 12,
            noise_sigma: 0.05,
            seed: 42,
        }
    }
}

const MAX_ATTEMPTS: usize = 200;

fn signature<R: Rng>(bands: usize, rng: &mut R) -> Vec<f64> {
    let base = rng.random_range(0.15..0.35);
    let bumps: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.1..0.5),
                rng.random_range(0.0..bands as f64),
                rng.random_range(bands as f64 / 12.0..bands as f64 / 4.0 + 1.0),
            )
        })
        .collect();
    (0..bands)
        .map(|b| {
            let b = b as f64;
            base + bumps
                .iter()
                .map(|(a, c, w)| a * (-(b - c).powi(2) / (2.0 * w * w)).exp())
                .sum::<f64>()
        })
        .collect()
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Pairwise signature separation demanded of generated classes.
fn min_separation(spec: &SynthSpec) -> f64 {
    (10.0 * spec.noise_sigma).max(0.1 * (spec.bands as f64).sqrt())
}

fn voronoi<R: Rng>(spec: &SynthSpec, rng: &mut R) -> Vec<u16> {
    let seeds: Vec<(f64, f64, u16)> = (0..spec.blob_count)
        .map(|i| {
            let class = if i < spec.num_classes {
                i as u16 + 1
            } else {
                rng.random_range(1..=spec.num_classes as u16)
            };
            (
                rng.random_range(0.0..spec.height as f64),
                rng.random_range(0.0..spec.width as f64),
                class,
            )
        })
        .collect();
    let mut labels = Vec::with_capacity(spec.height * spec.width);
    for x in 0..spec.height {
        for y in 0..spec.width {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let nearest = seeds
                .iter()
                .min_by(|a, b| {
                    let da = (a.0 - px).powi(2) + (a.1 - py).powi(2);
                    let db = (b.0 - px).powi(2) + (b.1 - py).powi(2);
                    da.total_cmp(&db)
                })
                .unwrap();
            labels.push(nearest.2);
        }
    }
    labels
}

pub fn synth_scene(spec: &SynthSpec) -> Result<(HyperCube, LabelMap)> {
    if spec.num_classes < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 classes, got {}",
            spec.num_classes
        )));
    }
    if spec.num_classes > u16::MAX as usize {
        return Err(Error::invalid("too many classes for 16-bit labels"));
    }
    if spec.blob_count < spec.num_classes {
        return Err(Error::invalid(format!(
            "{} blobs cannot host {} classes",
            spec.blob_count, spec.num_classes
        )));
    }
    if spec.height == 0 || spec.width == 0 || spec.bands == 0 {
        return Err(Error::invalid("scene extents must be positive"));
    }
    if !(spec.noise_sigma >= 0.0 && spec.noise_sigma.is_finite()) {
        return Err(Error::invalid(format!(
            "noise sigma must be >= 0, got {}",
            spec.noise_sigma
        )));
    }
    let mut rng = rng::seeded(spec.seed);

    let need = min_separation(spec);
    let mut signatures: Vec<Vec<f64>> = Vec::with_capacity(spec.num_classes);
    let mut attempts = 0;
    while signatures.len() < spec.num_classes {
        attempts += 1;
        if attempts > MAX_ATTEMPTS * spec.num_classes {
            return Err(Error::invalid("could not draw well separated class signatures"));
        }
        let s = signature(spec.bands, &mut rng);
        if signatures.iter().all(|t| l2(t, &s) >= need) {
            signatures.push(s);
        }
    }

    let pixels = spec.height * spec.width;
    let min_pixels = pixels.div_ceil(100);
    let mut labels = None;
    for _ in 0..MAX_ATTEMPTS {
        let candidate = voronoi(spec, &mut rng);
        let mut counts = vec![0usize; spec.num_classes + 1];
        for &l in &candidate {
            counts[l as usize] += 1;
        }
        if counts[1..].iter().all(|&c| c >= min_pixels) {
            labels = Some(candidate);
            break;
        }
    }
    let labels = labels.ok_or_else(|| Error::invalid("could not give every class 1% of the scene"))?;

    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE)).unwrap();
    let mut values = Vec::with_capacity(pixels * spec.bands);
    for &l in &labels {
        for &v in &signatures[l as usize - 1] {
            let n = if spec.noise_sigma > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            values.push((v + n) as f32);
        }
    }
    Ok((
        HyperCube::new(spec.height, spec.width, spec.bands, values)?,
        LabelMap::new(spec.height, spec.width, labels)?,
    ))
}
