//! End-to-end training and inference built from the library stages, plus
//! the on-disk model directory.

use std::collections::BTreeMap;
use std::path::Path;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::cnn::{
    decode_checkpoint, dense_pass, encode_checkpoint, read_network, write_network, DensePass, FeatureMap, GroupModels,
    LossCurve, NetworkSpec,
};
use crate::config::RunConfig;
use crate::crf::{
    build_graph, piecewise_train, segment, CrfGraph, KernelParams, MeanFieldConfig, PotentialNets, SpectralSource,
    TrainingGraph,
};
use crate::data::{
    augment_training_set, extract_patches, sample_training_pixels, split_band_groups, split_train_val, BandGroupSet,
    BandStats, HyperCube, LabelMap, UNLABELED,
};
use crate::error::{create_dir, read_file, write_file, Error, Result};
use crate::nn::SgdConfig;
use crate::refiner::{Placement, Refiner, RefinerSpec};
use crate::rng;
use crate::tensor::Tensor;

/// Independent seed for one pipeline stage.
pub fn derive_seed(seed: u64, stage: u64) -> u64 {
    rng::substream(seed, stage).next_u64()
}

const SEED_PIXELS: u64 = 1;
const SEED_AUGMENT: u64 = 2;
const SEED_SPLIT: u64 = 3;
const SEED_CNN: u64 = 4;
const SEED_TILES: u64 = 5;
const SEED_CRF: u64 = 6;

/// Everything inference needs.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub cnn: GroupModels,
    pub crf: PotentialNets,
    pub kernel: KernelParams,
    pub mean_field: MeanFieldConfig,
    pub spectral: SpectralSource,
}

impl Model {
    pub fn classes(&self) -> usize {
        self.crf.classes
    }
}

/// Trained band-group CNNs and their dense pass over the training cube.
#[derive(Clone, Debug)]
pub struct CnnStage {
    pub models: GroupModels,
    pub curves: BTreeMap<usize, LossCurve>,
    pub dense: DensePass,
    /// Labeled pixels not used to train the CNNs.
    pub test: LabelMap,
}

#[derive(Clone, Debug)]
pub struct CrfStage {
    pub nets: PotentialNets,
    pub kernel: KernelParams,
    pub curve: LossCurve,
    /// Pixels covered by CRF training or validation tiles.
    pub tiles: Vec<(usize, usize)>,
    pub tile: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub model: Model,
    pub cnn_curves: BTreeMap<usize, LossCurve>,
    pub crf_curve: LossCurve,
    /// Labeled pixels used by neither training stage.
    pub heldout: LabelMap,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    pub classification: LabelMap,
    pub segmentation: LabelMap,
    pub iterations: usize,
}

fn check_truth(cube: &HyperCube, truth: &LabelMap) -> Result<usize> {
    if cube.height() != truth.height() || cube.width() != truth.width() {
        return Err(Error::shape(
            "labels",
            &[cube.height(), cube.width()],
            &[truth.height(), truth.width()],
        ));
    }
    let classes = truth.num_classes();
    if classes < 2 {
        return Err(Error::MissingLabels(format!(
            "need at least 2 classes, found {classes}"
        )));
    }
    Ok(classes)
}

/// Standardise, sample, augment, split and train one CNN per band group,
/// then run the dense pass over the whole cube.
pub fn train_cnn_stage(cube: &HyperCube, truth: &LabelMap, cfg: &RunConfig, seed: u64) -> Result<CnnStage> {
    cfg.validate()?;
    let classes = check_truth(cube, truth)?;
    let stats = BandStats::measure(cube);
    let z = stats.apply(cube)?;
    let groups = split_band_groups(&z, cfg.data.group_size)?;
    let patch = (cfg.data.patch, cfg.data.patch);
    let (train_px, test) = sample_training_pixels(truth, cfg.data.train_per_class, derive_seed(seed, SEED_PIXELS))?;
    let real = extract_patches(&z, &train_px, &groups, patch)?;
    let mut aug_cfg = cfg.augment.clone();
    aug_cfg.seed = derive_seed(seed, SEED_AUGMENT);
    let samples = augment_training_set(&real, &aug_cfg)?;
    let (train, val) = split_train_val(&samples, cfg.data.train_fraction, derive_seed(seed, SEED_SPLIT))?;
    info!(
        "{} labeled pixels, {} patches after augmentation ({} train, {} validation)",
        train_px.labeled_count(),
        samples.len(),
        train.len(),
        val.len()
    );
    let spec = NetworkSpec::preset(&cfg.cnn.preset, classes)?;
    let sgd = SgdConfig {
        learning_rate: cfg.sgd.learning_rate,
        batch_size: cfg.sgd.batch_size,
        epochs: cfg.cnn.epochs,
        seed: derive_seed(seed, SEED_CNN),
    };
    let (params, curves) = crate::cnn::train_group_cnns(&train, &val, &spec, &sgd)?;
    let models = GroupModels {
        spec,
        groups,
        patch,
        stats,
        params,
    };
    let dense = dense_pass(cube, &models)?;
    Ok(CnnStage {
        models,
        curves,
        dense,
        test,
    })
}

/// The standardised cube laid out as a feature map with one spectral index
/// per band group; the last group is zero-padded to the full group size.
pub fn intensity_map(cube: &HyperCube, stats: &BandStats, groups: &BandGroupSet) -> Result<FeatureMap> {
    let z = stats.apply(cube)?;
    let c = groups.group_size;
    let (h, w, d) = (z.height(), z.width(), groups.len());
    let mut out = vec![0.0f32; h * w * d * c];
    for x in 0..h {
        for y in 0..w {
            let px = z.pixel(x, y);
            for (g, range) in groups.groups.iter().enumerate() {
                let at = ((x * w + y) * d + g) * c;
                out[at..at + range.len()].copy_from_slice(&px[range.clone()]);
            }
        }
    }
    FeatureMap::new(Tensor::new([h, w, d, c], out)?)
}

/// Builds the CRF graph over `features`, attaching intensities when the
/// appearance kernel compares spectra.
pub fn crf_graph(
    features: &FeatureMap,
    classes: usize,
    spectral: SpectralSource,
    intensities: Option<&FeatureMap>,
) -> Result<CrfGraph> {
    let mut graph = build_graph(features, classes)?;
    if spectral == SpectralSource::Intensities {
        let i = intensities.ok_or_else(|| Error::invalid("intensity map required"))?;
        graph.spectra = Some(i.clone());
    }
    Ok(graph)
}

/// Top-left corners of `count` seeded `tile x tile` windows lying wholly on
/// labeled pixels. Windows are picked greedily: first to cover classes not
/// yet seen, then to hold as many classes as possible; ties go to a seeded
/// shuffle order. Windows may overlap but never repeat.
pub fn pick_tiles(truth: &LabelMap, tile: usize, count: usize, seed: u64) -> Vec<(usize, usize)> {
    let (h, w) = (truth.height(), truth.width());
    if tile > h || tile > w || tile == 0 {
        return Vec::new();
    }
    // summed-area table of unlabeled pixels
    let mut sat = vec![0usize; (h + 1) * (w + 1)];
    for x in 0..h {
        for y in 0..w {
            let u = (truth.get(x, y) == UNLABELED) as usize;
            sat[(x + 1) * (w + 1) + y + 1] =
                u + sat[x * (w + 1) + y + 1] + sat[(x + 1) * (w + 1) + y] - sat[x * (w + 1) + y];
        }
    }
    let empty = |x: usize, y: usize| {
        let (a, b) = (x + tile, y + tile);
        sat[a * (w + 1) + b] + sat[x * (w + 1) + y] == sat[x * (w + 1) + b] + sat[a * (w + 1) + y]
    };
    let mut corners: Vec<(usize, usize)> = (0..=h - tile)
        .flat_map(|x| (0..=w - tile).map(move |y| (x, y)))
        .filter(|&(x, y)| empty(x, y))
        .collect();
    corners.shuffle(&mut rng::seeded(seed));
    let classes_in = |&(x0, y0): &(usize, usize)| {
        let mut set = std::collections::BTreeSet::new();
        for x in x0..x0 + tile {
            for y in y0..y0 + tile {
                set.insert(truth.get(x, y));
            }
        }
        set
    };
    let mut candidates: Vec<_> = corners.into_iter().map(|c| (c, classes_in(&c))).collect();
    let mut seen = std::collections::BTreeSet::new();
    let mut picked = Vec::with_capacity(count);
    while picked.len() < count && !candidates.is_empty() {
        let score = |set: &std::collections::BTreeSet<u16>| (set.difference(&seen).count(), set.len());
        let mut best = 0;
        for i in 1..candidates.len() {
            if score(&candidates[i].1) > score(&candidates[best].1) {
                best = i;
            }
        }
        let (corner, set) = candidates.remove(best);
        seen.extend(set);
        picked.push(corner);
    }
    picked
}

fn training_graph(
    features: &FeatureMap,
    intensities: Option<&FeatureMap>,
    truth: &LabelMap,
    corner: (usize, usize),
    tile: usize,
    classes: usize,
    spectral: SpectralSource,
) -> Result<TrainingGraph> {
    let (x0, y0) = corner;
    let fm = features.crop(x0, y0, tile, tile)?;
    let spectra = intensities.map(|i| i.crop(x0, y0, tile, tile)).transpose()?;
    let graph = crf_graph(&fm, classes, spectral, spectra.as_ref())?;
    let mut labels = Vec::with_capacity(graph.nodes());
    for x in 0..tile {
        for y in 0..tile {
            let l = truth.get(x0 + x, y0 + y) as usize - 1;
            labels.extend(std::iter::repeat_n(l, graph.depth()));
        }
    }
    TrainingGraph::new(graph, labels)
}

fn tile_accuracy(
    graphs: &[TrainingGraph],
    nets: &PotentialNets,
    kp: &KernelParams,
    mf: &MeanFieldConfig,
) -> Result<f64> {
    let (mut right, mut total) = (0usize, 0usize);
    for tg in graphs {
        let seg = segment(&tg.graph, nets, kp, mf)?;
        let d = tg.graph.depth();
        for (i, &l) in seg.labels.labels().iter().enumerate() {
            right += (l as usize - 1 == tg.labels[i * d]) as usize;
            total += 1;
        }
    }
    Ok(right as f64 / total.max(1) as f64)
}

/// Kernel parameters with the best validation-tile accuracy over a small
/// grid around the configured values.
fn search_kernel(
    graphs: &[TrainingGraph],
    nets: &PotentialNets,
    base: &KernelParams,
    mf: &MeanFieldConfig,
) -> Result<KernelParams> {
    let mut best = (tile_accuracy(graphs, nets, base, mf)?, base.clone());
    for wf in [0.25, 0.5, 2.0, 4.0] {
        for gf in [0.5, 1.0, 2.0] {
            let kp = KernelParams {
                w1: base.w1 * wf,
                w2: base.w2 * wf,
                theta_gamma: base.theta_gamma * gf,
                ..base.clone()
            };
            let acc = tile_accuracy(graphs, nets, &kp, mf)?;
            if acc > best.0 {
                best = (acc, kp);
            }
        }
    }
    info!("kernel search picked {:?} (tile accuracy {:.4})", best.1, best.0);
    Ok(best.1)
}

/// Piecewise training of the potential nets on fully labeled tiles.
pub fn train_crf_stage(
    cube: &HyperCube,
    truth: &LabelMap,
    cnn: &CnnStage,
    cfg: &RunConfig,
    seed: u64,
) -> Result<CrfStage> {
    let classes = check_truth(cube, truth)?;
    let c = &cfg.crf;
    let tile = c.tile.min(cube.height()).min(cube.width());
    let corners = pick_tiles(truth, tile, c.train_tiles + c.val_tiles, derive_seed(seed, SEED_TILES));
    if corners.is_empty() {
        return Err(Error::MissingLabels(format!(
            "no fully labeled {tile}x{tile} tile for CRF training"
        )));
    }
    if corners.len() < c.train_tiles + c.val_tiles {
        warn!("only {} fully labeled tiles available", corners.len());
    }
    let features = &cnn.dense.features;
    let intensities = match c.spectral {
        SpectralSource::Intensities => Some(intensity_map(cube, &cnn.models.stats, &cnn.models.groups)?),
        SpectralSource::Features => None,
    };
    let graphs = corners
        .iter()
        .map(|&corner| training_graph(features, intensities.as_ref(), truth, corner, tile, classes, c.spectral))
        .collect::<Result<Vec<_>>>()?;
    let n_train = c.train_tiles.min(graphs.len());
    let (train, val) = graphs.split_at(n_train);

    let crf_seed = derive_seed(seed, SEED_CRF);
    let unary = NetworkSpec::preset(&c.unary_preset, classes)?;
    let pairwise = NetworkSpec::preset(&c.pairwise_preset, classes * classes)?;
    let mut nets = PotentialNets::init(
        &unary,
        &pairwise,
        features.channels(),
        classes,
        cfg.refiner.placement,
        &mut rng::seeded(crf_seed),
    )?;
    nets.learn_mu = c.learn_mu;
    let sgd = SgdConfig {
        learning_rate: c.learning_rate,
        batch_size: c.batch_size,
        epochs: c.epochs,
        seed: crf_seed,
    };
    info!(
        "CRF training on {} tiles of {tile}x{tile} ({} validation)",
        train.len(),
        val.len()
    );
    let (nets, curve) = piecewise_train(train, val, nets, &sgd)?;

    let range = intensities.as_ref().unwrap_or(features).range();
    let mut kernel = c.kernel(range);
    if c.grid_search {
        kernel = search_kernel(
            if val.is_empty() { train } else { val },
            &nets,
            &kernel,
            &c.mean_field(),
        )?;
    }
    Ok(CrfStage {
        nets,
        kernel,
        curve,
        tiles: corners,
        tile,
    })
}

/// `truth` with the CNN training pixels and every CRF tile removed.
pub fn heldout_labels(cnn: &CnnStage, crf: &CrfStage) -> LabelMap {
    let mut map = cnn.test.clone();
    for &(x0, y0) in &crf.tiles {
        for x in x0..x0 + crf.tile {
            for y in y0..y0 + crf.tile {
                map.set(x, y, UNLABELED);
            }
        }
    }
    map
}

pub fn assemble(cnn: CnnStage, crf: CrfStage, cfg: &RunConfig) -> TrainOutput {
    let heldout = heldout_labels(&cnn, &crf);
    TrainOutput {
        model: Model {
            cnn: cnn.models,
            crf: crf.nets,
            kernel: crf.kernel,
            mean_field: cfg.crf.mean_field(),
            spectral: cfg.crf.spectral,
        },
        cnn_curves: cnn.curves,
        crf_curve: crf.curve,
        heldout,
    }
}

/// Trains the full model from a cube and its ground truth.
pub fn train(cube: &HyperCube, truth: &LabelMap, cfg: &RunConfig, seed: u64) -> Result<TrainOutput> {
    let cnn = train_cnn_stage(cube, truth, cfg, seed)?;
    let crf = train_crf_stage(cube, truth, &cnn, cfg, seed)?;
    Ok(assemble(cnn, crf, cfg))
}

/// CRF segmentation from an existing dense pass.
pub fn segment_dense(cube: &HyperCube, dense: &DensePass, model: &Model) -> Result<Inference> {
    let intensities = match model.spectral {
        SpectralSource::Intensities => Some(intensity_map(cube, &model.cnn.stats, &model.cnn.groups)?),
        SpectralSource::Features => None,
    };
    let graph = crf_graph(&dense.features, model.classes(), model.spectral, intensities.as_ref())?;
    let seg = segment(&graph, &model.crf, &model.kernel, &model.mean_field)?;
    Ok(Inference {
        classification: dense.labels.clone(),
        segmentation: seg.labels,
        iterations: seg.iterations,
    })
}

pub fn infer(cube: &HyperCube, model: &Model) -> Result<Inference> {
    segment_dense(cube, &dense_pass(cube, &model.cnn)?, model)
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    classes: usize,
    bands: usize,
    group_size: usize,
    patch: [usize; 2],
    group_count: usize,
    spectral: SpectralSource,
    placement: Placement,
    learn_mu: bool,
    kernel: KernelParams,
    mean_field: MeanFieldConfig,
    stats: BandStats,
}

const MANIFEST: &str = "model.toml";

fn group_file(g: usize) -> String {
    format!("group-{g:02}.hcnn")
}

/// Writes the model as a directory of checkpoints plus a TOML manifest.
pub fn save_model(model: &Model, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    create_dir(dir)?;
    let m = Manifest {
        classes: model.classes(),
        bands: model.cnn.groups.total_bands(),
        group_size: model.cnn.groups.group_size,
        patch: [model.cnn.patch.0, model.cnn.patch.1],
        group_count: model.cnn.groups.len(),
        spectral: model.spectral,
        placement: model.crf.placement,
        learn_mu: model.crf.learn_mu,
        kernel: model.kernel.clone(),
        mean_field: model.mean_field.clone(),
        stats: model.cnn.stats.clone(),
    };
    write_file(
        dir.join(MANIFEST),
        toml::to_string(&m).map_err(|e| Error::Config(e.to_string()))?,
    )?;
    for (g, p) in &model.cnn.params {
        write_network(&model.cnn.spec, p, dir.join(group_file(*g)))?;
    }
    write_network(&model.crf.unary_spec, &model.crf.unary, dir.join("unary.hcnn"))?;
    write_network(&model.crf.pairwise_spec, &model.crf.pairwise, dir.join("pairwise.hcnn"))?;
    let header = toml::to_string(&model.crf.refiner.spec).map_err(|e| Error::Config(e.to_string()))?;
    let mut tensors = vec![(model.crf.mu.shape().to_vec(), model.crf.mu.data())];
    tensors.extend(
        model
            .crf
            .refiner
            .kernels()
            .into_iter()
            .map(|t| (t.shape().to_vec(), t.data())),
    );
    write_file(dir.join("crf.hcnn"), encode_checkpoint(&header, &tensors))?;
    Ok(())
}

pub fn load_model(dir: impl AsRef<Path>) -> Result<Model> {
    let dir = dir.as_ref();
    let text = String::from_utf8(read_file(dir.join(MANIFEST))?).map_err(|e| Error::Corrupt(e.to_string()))?;
    let m: Manifest = toml::from_str(&text).map_err(|e| Error::Config(format!("{MANIFEST}: {e}")))?;
    let groups = BandGroupSet::for_bands(m.bands, m.group_size)?;
    if groups.len() != m.group_count {
        return Err(Error::Corrupt(format!(
            "manifest lists {} groups, bands imply {}",
            m.group_count,
            groups.len()
        )));
    }
    let mut spec = None;
    let mut params = BTreeMap::new();
    for g in 0..m.group_count {
        let path = dir.join(group_file(g));
        if !path.exists() {
            return Err(Error::MissingGroup(g));
        }
        let (s, p) = read_network(path)?;
        spec = Some(s);
        params.insert(g, p);
    }
    let spec = spec.ok_or_else(|| Error::Corrupt("model has no band groups".into()))?;
    let (unary_spec, unary) = read_network(dir.join("unary.hcnn"))?;
    let (pairwise_spec, pairwise) = read_network(dir.join("pairwise.hcnn"))?;
    let (header, mut tensors) = decode_checkpoint(&read_file(dir.join("crf.hcnn"))?)?;
    let rspec: RefinerSpec = toml::from_str(&header).map_err(|e| Error::Corrupt(e.to_string()))?;
    if tensors.is_empty() {
        return Err(Error::Corrupt("crf.hcnn holds no compatibility matrix".into()));
    }
    let mu = tensors.remove(0);
    mu.expect_shape("compatibility matrix", &[m.classes, m.classes])?;
    let refiner = Refiner::from_kernels(&rspec, tensors)?;
    Ok(Model {
        cnn: GroupModels {
            spec,
            groups,
            patch: (m.patch[0], m.patch[1]),
            stats: m.stats,
            params,
        },
        crf: PotentialNets {
            classes: m.classes,
            unary_spec,
            unary,
            pairwise_spec,
            pairwise,
            mu,
            learn_mu: m.learn_mu,
            placement: m.placement,
            refiner,
        },
        kernel: m.kernel,
        mean_field: m.mean_field,
        spectral: m.spectral,
    })
}

/// Loss curve file of band group `g`.
pub fn cnn_curve_file(g: usize) -> String {
    format!("cnn-group-{g:02}-loss.csv")
}

pub const CRF_CURVE_FILE: &str = "crf-loss.csv";
pub const HELDOUT_FILE: &str = "heldout.lbl";

/// The model directory plus loss curves and the held-out truth map.
pub fn write_train_output(out: &TrainOutput, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    save_model(&out.model, dir)?;
    for (g, c) in &out.cnn_curves {
        write_file(dir.join(cnn_curve_file(*g)), c.to_csv())?;
    }
    write_file(dir.join(CRF_CURVE_FILE), out.crf_curve.to_csv())?;
    crate::data::write_labels(&out.heldout, dir.join(HELDOUT_FILE))?;
    Ok(())
}
