//! Independent oracles and randomized checks shared by the integration tests
//! and the acceptance harness.
#![allow(dead_code)]

use rand::Rng;

use hyperseg_core::cnn::{FeatureMap, LayerSpec, NetworkSpec, Topology};
use hyperseg_core::crf::{
    build_graph, exact_with_weights, mean_field_with_weights, piecewise_loss, piecewise_loss_and_grad, CrfGraph,
    MeanFieldConfig, PotentialGrads, PotentialNets, TrainingGraph,
};
use hyperseg_core::data::{fuse_virtual_sample, geometric_augment, AugmentConfig, LabeledPatch};
use hyperseg_core::eval::paired_t_test;
use hyperseg_core::nn::{
    conv3d_backward, conv3d_forward, deconv3d, deconv3d_backward, maxpool3d, softmax, softmax_cross_entropy, unpool3d,
    unpool3d_backward, Activation, Conv3dLayer, DenseLayer, Padding,
};
use hyperseg_core::refiner::{Placement, Refiner, RefinerSpec, StageSpec};
use hyperseg_core::rng;
use hyperseg_core::{Scalar, Tensor};

pub type Rand = hyperseg_core::rng::Rng;

pub fn seeded(seed: u64) -> Rand {
    rng::seeded(seed)
}

pub fn random_tensor<T: Scalar>(shape: &[usize], rng: &mut Rand) -> Tensor<T> {
    Tensor::from_fn(shape.to_vec(), |_| T::from_f64(rng.random_range(-1.0..1.0)))
}

pub fn random_vec(n: usize, rng: &mut Rand) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Euclidean distance between `a` and `b` relative to the larger norm.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    diff / norm(a).max(norm(b)).max(1e-8)
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn fd_gradient(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let h = 1e-6;
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ---------------------------------------------------------------------------
// Convolution

/// Six nested loops over output voxel, input map and kernel offset; zero
/// outside the input; identity activation.
pub fn conv_oracle(input: &Tensor<f64>, kernels: &Tensor<f64>, biases: &[f64], padding: Padding) -> Tensor<f64> {
    let s = input.shape();
    let k = kernels.shape();
    let (m_in, p, q, r, m_out) = (k[0], k[1], k[2], k[3], k[4]);
    let (pad, out) = match padding {
        Padding::Valid => ([0; 3], [s[1] + 1 - p, s[2] + 1 - q, s[3] + 1 - r]),
        Padding::Same => ([(p - 1) / 2, (q - 1) / 2, (r - 1) / 2], [s[1], s[2], s[3]]),
    };
    let at = |i: usize, x: isize, y: isize, z: isize| -> f64 {
        if x < 0 || y < 0 || z < 0 || x >= s[1] as isize || y >= s[2] as isize || z >= s[3] as isize {
            0.0
        } else {
            input.get(&[i, x as usize, y as usize, z as usize])
        }
    };
    Tensor::from_fn([m_out, out[0], out[1], out[2]], |flat| {
        let z = flat % out[2];
        let y = (flat / out[2]) % out[1];
        let x = (flat / (out[2] * out[1])) % out[0];
        let j = flat / (out[2] * out[1] * out[0]);
        let mut acc = biases[j];
        for i in 0..m_in {
            for a in 0..p {
                for b in 0..q {
                    for c in 0..r {
                        let v = at(
                            i,
                            (x + a) as isize - pad[0] as isize,
                            (y + b) as isize - pad[1] as isize,
                            (z + c) as isize - pad[2] as isize,
                        );
                        acc += kernels.get(&[i, a, b, c, j]) * v;
                    }
                }
            }
        }
        acc
    })
}

/// A random convolution problem: input shape, kernel extent and padding.
pub struct ConvCase {
    pub input: [usize; 4],
    pub extent: [usize; 3],
    pub m_out: usize,
    pub padding: Padding,
}

pub fn random_conv_case(rng: &mut Rand, max_extent: usize, max_maps: usize) -> ConvCase {
    let padding = if rng.random_bool(0.5) {
        Padding::Same
    } else {
        Padding::Valid
    };
    let input = [
        rng.random_range(1..=max_maps),
        rng.random_range(1..=max_extent),
        rng.random_range(1..=max_extent),
        rng.random_range(1..=max_extent),
    ];
    let mut extent = [0; 3];
    for a in 0..3 {
        let n = input[a + 1];
        extent[a] = match padding {
            Padding::Valid => rng.random_range(1..=n.min(5)),
            // odd spatial extents; any spectral extent
            Padding::Same if a < 2 => 2 * rng.random_range(0..=n.min(5).div_ceil(2) - 1) + 1,
            Padding::Same => rng.random_range(1..=n.min(5)),
        };
    }
    ConvCase {
        input,
        extent,
        m_out: rng.random_range(1..=max_maps),
        padding,
    }
}

fn random_layer<T: Scalar>(c: &ConvCase, activation: Activation, rng: &mut Rand) -> Conv3dLayer<T> {
    let [p, q, r] = c.extent;
    Conv3dLayer::new(
        random_tensor(&[c.input[0], p, q, r, c.m_out], rng),
        random_tensor::<T>(&[c.m_out], rng).into_data(),
        activation,
    )
    .unwrap()
}

/// Largest absolute difference between `conv3d_forward` in `f32` and the
/// direct-summation oracle over `instances` random problems.
pub fn conv_oracle_max_diff(instances: usize, seed: u64) -> f64 {
    let mut rng = seeded(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let c = random_conv_case(&mut rng, 8, 4);
        let x: Tensor<f32> = random_tensor(&c.input, &mut rng);
        let layer: Conv3dLayer<f32> = random_layer(&c, Activation::Identity, &mut rng);
        let got = conv3d_forward(&x, &layer, c.padding).unwrap();
        let b: Vec<f64> = layer.biases.iter().map(|&v| v as f64).collect();
        let want = conv_oracle(&x.cast(), &layer.kernels.cast(), &b, c.padding);
        assert_eq!(got.shape(), want.shape());
        for (g, w) in got.data().iter().zip(want.data()) {
            worst = worst.max((*g as f64 - w).abs());
        }
    }
    worst
}

// ---------------------------------------------------------------------------
// Adjointness

/// Largest `|<conv(x), y> - <x, deconv(y)>|` over random linear layers.
pub fn adjoint_max_diff(instances: usize, seed: u64) -> f64 {
    let mut rng = seeded(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let c = random_conv_case(&mut rng, 6, 3);
        let x: Tensor<f64> = random_tensor(&c.input, &mut rng);
        let mut layer: Conv3dLayer<f64> = random_layer(&c, Activation::Identity, &mut rng);
        layer.biases.iter_mut().for_each(|b| *b = 0.0);
        let fx = conv3d_forward(&x, &layer, c.padding).unwrap();
        let y: Tensor<f64> = random_tensor(fx.shape(), &mut rng);
        let back = deconv3d(&y, &layer, c.padding).unwrap();
        worst = worst.max((fx.dot(&y).unwrap() - x.dot(&back).unwrap()).abs());
    }
    worst
}

// ---------------------------------------------------------------------------
// Finite-difference gradient suite

#[derive(Clone, Debug)]
pub struct GradResult {
    pub op: &'static str,
    pub instances: usize,
    pub max_rel_error: f64,
}

fn linear_loss(t: &Tensor<f64>, c: &Tensor<f64>) -> f64 {
    t.dot(c).unwrap()
}

/// conv3d with respect to input, kernels and biases.
pub fn grad_conv3d(instances: usize, seed: u64) -> GradResult {
    let mut rng = seeded(seed);
    let mut worst = 0.0f64;
    for i in 0..instances {
        let c = random_conv_case(&mut rng, 5, 2);
        let act = if i % 2 == 0 {
            Activation::Sigmoid
        } else {
            Activation::Identity
        };
        let x: Tensor<f64> = random_tensor(&c.input, &mut rng);
        let layer: Conv3dLayer<f64> = random_layer(&c, act, &mut rng);
        let out = conv3d_forward(&x, &layer, c.padding).unwrap();
        let w: Tensor<f64> = random_tensor(out.shape(), &mut rng);
        let g = conv3d_backward(&x, &layer, c.padding, &w).unwrap();

        let fx = fd_gradient(x.data(), |v| {
            linear_loss(
                &conv3d_forward(&Tensor::new(x.shape(), v.to_vec()).unwrap(), &layer, c.padding).unwrap(),
                &w,
            )
        });
        let fk = fd_gradient(layer.kernels.data(), |v| {
            let mut l = layer.clone();
            l.kernels = Tensor::new(layer.kernels.shape(), v.to_vec()).unwrap();
            linear_loss(&conv3d_forward(&x, &l, c.padding).unwrap(), &w)
        });
        let fb = fd_gradient(&layer.biases, |v| {
            let mut l = layer.clone();
            l.biases = v.to_vec();
            linear_loss(&conv3d_forward(&x, &l, c.padding).unwrap(), &w)
        });
        worst = worst
            .max(rel_error(g.input.data(), &fx))
            .max(rel_error(g.kernels.data(), &fk))
            .max(rel_error(&g.biases, &fb));
    }
    GradResult {
        op: "conv3d",
        instances,
        max_rel_error: worst,
    }
}

pub fn grad_dense(instances: usize, seed: u64) -> GradResult {
    let mut rng = seeded(seed);
    let mut worst = 0.0f64;
    for i in 0..instances {
        let (n_in, n_out) = (rng.random_range(1..=12), rng.random_range(1..=8));
        let act = [Activation::Identity, Activation::Sigmoid][i % 2];
        let layer = DenseLayer::new(
            random_tensor(&[n_out, n_in], &mut rng),
            random_vec(n_out, &mut rng),
            act,
        )
        .unwrap();
        let x = random_vec(n_in, &mut rng);
        let c = random_vec(n_out, &mut rng);
        let y = layer.forward(&x).unwrap();
        let g = layer.backward(&x, &y, &c).unwrap();
        let fx = fd_gradient(&x, |v| dot(&layer.forward(v).unwrap(), &c));
        let fw = fd_gradient(layer.weights.data(), |v| {
            let mut l = layer.clone();
            l.weights = Tensor::new([n_out, n_in], v.to_vec()).unwrap();
            dot(&l.forward(&x).unwrap(), &c)
        });
        let fb = fd_gradient(&layer.biases, |v| {
            let mut l = layer.clone();
            l.biases = v.to_vec();
            dot(&l.forward(&x).unwrap(), &c)
        });
        worst = worst
            .max(rel_error(&g.input, &fx))
            .max(rel_error(g.weights.data(), &fw))
            .max(rel_error(&g.biases, &fb));
    }
    GradResult {
        op: "dense",
        instances,
        max_rel_error: worst,
    }
}

pub fn grad_softmax_ce(instances: usize, seed: u64) -> GradResult {
    let mut rng = seeded(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let k = rng.random_range(2..=9);
        let logits: Vec<f64> = random_vec(k, &mut rng).iter().map(|v| 4.0 * v).collect();
        let t = rng.random_range(0..k);
        let (_, g) = softmax_cross_entropy(&logits, t).unwrap();
        let f = fd_gradient(&logits, |v| softmax_cross_entropy(v, t).unwrap().0);
        worst = worst.max(rel_error(&g, &f));
    }
    GradResult {
        op: "softmax_cross_entropy",
        instances,
        max_rel_error: worst,
    }
}

pub fn grad_deconv3d(instances: usize, seed: u64) -> GradResult {
    let mut rng = seeded(seed);
    let mut worst = 0.0f64;
    for i in 0..instances {
        let c = random_conv_case(&mut rng, 5, 2);
        let act = [Activation::Identity, Activation::Sigmoid][i % 2];
        let layer: Conv3dLayer<f64> = random_layer(&c, act, &mut rng);
        // deconv consumes the conv output shape
        let narrow = conv3d_forward(&random_tensor::<f64>(&c.input, &mut rng), &layer, c.padding).unwrap();
        let x: Tensor<f64> = random_tensor(narrow.shape(), &mut rng);
        let out = deconv3d(&x, &layer, c.padding).unwrap();
        let w: Tensor<f64> = random_tensor(out.shape(), &mut rng);
        let g = deconv3d_backward(&x, &layer, c.padding, &out, &w).unwrap();
        let fx = fd_gradient(x.data(), |v| {
            linear_loss(
                &deconv3d(&Tensor::new(x.shape(), v.to_vec()).unwrap(), &layer, c.padding).unwrap(),
                &w,
            )
        });
        let fk = fd_gradient(layer.kernels.data(), |v| {
            let mut l = layer.clone();
            l.kernels = Tensor::new(layer.kernels.shape(), v.to_vec()).unwrap();
            linear_loss(&deconv3d(&x, &l, c.padding).unwrap(), &w)
        });
        worst = worst
            .max(rel_error(g.input.data(), &fx))
            .max(rel_error(g.kernels.data(), &fk));
    }
    GradResult {
        op: "deconv3d",
        instances,
        max_rel_error: worst,
    }
}

/// Distinct values so that pooling has no ties.
fn distinct_tensor(shape: &[usize], rng: &mut Rand) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
    use rand::seq::SliceRandom;
    v.shuffle(rng);
    Tensor::new(shape.to_vec(), v).unwrap()
}

/// Max pooling with respect to its input and unpooling with respect to the
/// pooled values.
pub fn grad_unpool(instances: usize, seed: u64) -> GradResult {
    let mut rng = seeded(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let shape = [
            rng.random_range(1..=2),
            rng.random_range(1..=6),
            rng.random_range(1..=6),
            rng.random_range(1..=3),
        ];
        let x = distinct_tensor(&shape, &mut rng);
        let rec = maxpool3d(&x).unwrap();
        let c: Tensor<f64> = random_tensor(rec.output.shape(), &mut rng);
        // d <maxpool(x), c> / dx is the unpooled c
        let analytic = unpool3d(&rec, &c).unwrap();
        let fx = fd_gradient(x.data(), |v| {
            linear_loss(&maxpool3d(&Tensor::new(shape, v.to_vec()).unwrap()).unwrap().output, &c)
        });
        worst = worst.max(rel_error(analytic.data(), &fx));

        let v: Tensor<f64> = random_tensor(rec.output.shape(), &mut rng);
        let w: Tensor<f64> = random_tensor(&shape, &mut rng);
        let g = unpool3d_backward(&rec, &w).unwrap();
        let fv = fd_gradient(v.data(), |p| {
            linear_loss(
                &unpool3d(&rec, &Tensor::new(v.shape(), p.to_vec()).unwrap()).unwrap(),
                &w,
            )
        });
        worst = worst.max(rel_error(g.data(), &fv));
    }
    GradResult {
        op: "maxpool/unpool",
        instances,
        max_rel_error: worst,
    }
}

/// One refiner stage (lift, unpool, deconv with ReLU) with respect to its
/// kernels and its coarse input.
pub fn grad_refiner_stage(instances: usize, seed: u64) -> GradResult {
    let mut rng = seeded(seed);
    let mut worst = 0.0f64;
    for i in 0..instances {
        let width = rng.random_range(1..=3);
        let record_maps = rng.random_range(1..=3);
        let fine = [
            record_maps,
            rng.random_range(2..=6),
            rng.random_range(2..=6),
            rng.random_range(1..=3),
        ];
        let rec = maxpool3d(&distinct_tensor(&fine, &mut rng)).unwrap();
        let spec = RefinerSpec {
            width,
            stages: vec![StageSpec {
                record_maps,
                extent: [3, 3, 1 + 2 * (i % 2)],
                relu: i % 3 != 0,
            }],
        };
        let mut refiner = Refiner::<f64>::init(&spec);
        for k in refiner.kernels_mut() {
            *k = random_tensor(k.shape(), &mut rng);
        }
        let mut coarse_shape = rec.output.shape().to_vec();
        coarse_shape[0] = width;
        let coarse: Tensor<f64> = random_tensor(&coarse_shape, &mut rng);
        let records = [rec];
        let trace = refiner.refine_trace(&coarse, &records).unwrap();
        let out = trace.output().unwrap().clone();
        let w: Tensor<f64> = random_tensor(out.shape(), &mut rng);
        let (grads, g_coarse) = refiner.backward(&trace, &records, &w).unwrap();

        let fc = fd_gradient(coarse.data(), |v| {
            linear_loss(
                &refiner
                    .refine(&Tensor::new(coarse.shape(), v.to_vec()).unwrap(), &records)
                    .unwrap(),
                &w,
            )
        });
        worst = worst.max(rel_error(g_coarse.data(), &fc));
        for (ki, analytic) in [&grads[0][0], &grads[0][1]].into_iter().enumerate() {
            let base = refiner.kernels()[ki].clone();
            let f = fd_gradient(base.data(), |v| {
                let mut r = refiner.clone();
                *r.kernels_mut()[ki] = Tensor::new(base.shape(), v.to_vec()).unwrap();
                linear_loss(&r.refine(&coarse, &records).unwrap(), &w)
            });
            worst = worst.max(rel_error(analytic.data(), &f));
        }
    }
    GradResult {
        op: "refiner stage",
        instances,
        max_rel_error: worst,
    }
}

// ---------------------------------------------------------------------------
// CRF helpers

/// A small fully convolutional net with one pool.
pub fn tiny_seg_spec() -> NetworkSpec {
    NetworkSpec {
        name: "tiny-seg".into(),
        padding: Padding::Same,
        topology: Topology::FullyConvolutional,
        layers: vec![
            LayerSpec::Conv3d {
                kernels: 3,
                extent: [3, 3, 1],
                activation: Activation::Relu,
            },
            LayerSpec::MaxPool,
            LayerSpec::Conv3d {
                kernels: 3,
                extent: [3, 3, 1],
                activation: Activation::Sigmoid,
            },
            LayerSpec::Softmax { classes: 2 },
        ],
    }
}

/// Random graph over an `h x w x d` grid with `c` feature channels.
pub fn random_graph(h: usize, w: usize, d: usize, c: usize, k: usize, rng: &mut Rand) -> CrfGraph {
    let fm = FeatureMap::new(random_tensor(&[h, w, d, c], rng)).unwrap();
    build_graph(&fm, k).unwrap()
}

/// Graph whose features carry the label: each pixel's first channel is its
/// class index plus noise.
pub fn toy_training_graph(h: usize, w: usize, d: usize, c: usize, k: usize, rng: &mut Rand) -> TrainingGraph {
    let split = rng.random_range(1..w.max(2));
    let labels_px: Vec<usize> = (0..h * w)
        .map(|i| if i % w < split { 0 } else { (1 + i / w) % k })
        .collect();
    let fm = FeatureMap::new(Tensor::from_fn([h, w, d, c], |i| {
        let px = i / (d * c);
        let ch = i % c;
        let base = if ch == 0 { labels_px[px] as f32 } else { 0.0 };
        base + rng.random_range(-0.2..0.2)
    }))
    .unwrap();
    let graph = build_graph(&fm, k).unwrap();
    let labels = (0..graph.nodes()).map(|n| labels_px[n / d]).collect();
    TrainingGraph::new(graph, labels).unwrap()
}

fn flat_params(nets: &PotentialNets<f64>) -> Vec<f64> {
    let mut n = nets.clone();
    let mut out = Vec::new();
    for s in n.unary.slices_mut().into_iter().chain(n.pairwise.slices_mut()) {
        out.extend_from_slice(s);
    }
    for k in n.refiner.kernels() {
        out.extend_from_slice(k.data());
    }
    if nets.learn_mu {
        out.extend_from_slice(nets.mu.data());
    }
    out
}

fn set_params(nets: &mut PotentialNets<f64>, flat: &[f64]) {
    let mut at = 0;
    let learn_mu = nets.learn_mu;
    let mut slots: Vec<&mut [f64]> = nets.unary.slices_mut();
    slots.extend(nets.pairwise.slices_mut());
    slots.extend(nets.refiner.kernels_mut().into_iter().map(|k| k.data_mut()));
    if learn_mu {
        slots.push(nets.mu.data_mut());
    }
    for s in slots {
        s.copy_from_slice(&flat[at..at + s.len()]);
        at += s.len();
    }
}

fn flat_grads(g: &PotentialGrads<f64>, learn_mu: bool) -> Vec<f64> {
    let mut g = g.clone();
    let mut out = Vec::new();
    for s in g.unary.slices_mut().into_iter().chain(g.pairwise.slices_mut()) {
        out.extend_from_slice(s);
    }
    for k in &g.refiner {
        out.extend_from_slice(k.data());
    }
    if learn_mu {
        out.extend_from_slice(g.mu.data());
    }
    out
}

/// Piecewise loss with respect to every net parameter (and `mu` when it is
/// learned) on random small graphs, for every refiner placement.
pub fn grad_piecewise(instances: usize, seed: u64) -> GradResult {
    let mut rng = seeded(seed);
    let mut worst = 0.0f64;
    let spec = tiny_seg_spec();
    for i in 0..instances {
        let k = rng.random_range(2..=3);
        let c = rng.random_range(1..=2);
        let (h, w, d) = (
            rng.random_range(2..=4),
            rng.random_range(2..=4),
            rng.random_range(1..=2),
        );
        let mut tg = toy_training_graph(h, w, d, c, k, &mut rng);
        tg.graph.features = FeatureMap::new(random_tensor(&[h, w, d, c], &mut rng)).unwrap();
        let placement = [Placement::None, Placement::Unary, Placement::Pairwise][i % 3];
        let mut nets = PotentialNets::<f64>::init(&spec, &spec, c, k, placement, &mut rng).unwrap();
        nets.learn_mu = i % 2 == 1;
        if nets.learn_mu {
            nets.mu = random_tensor(&[k, k], &mut rng);
        }
        for kern in nets.refiner.kernels_mut() {
            *kern = random_tensor(kern.shape(), &mut rng);
        }
        let (_, grads) = piecewise_loss_and_grad(&nets, &tg).unwrap();
        let analytic = flat_grads(&grads, nets.learn_mu);
        let theta = flat_params(&nets);
        let numeric = fd_gradient(&theta, |v| {
            let mut n = nets.clone();
            set_params(&mut n, v);
            piecewise_loss(&n, &tg).unwrap()
        });
        worst = worst.max(rel_error(&analytic, &numeric));
    }
    GradResult {
        op: "piecewise loss",
        instances,
        max_rel_error: worst,
    }
}

/// The full finite-difference suite with `instances` problems per op.
pub fn gradient_suite(instances: usize, seed: u64) -> Vec<GradResult> {
    vec![
        grad_conv3d(instances, seed),
        grad_dense(instances, seed + 1),
        grad_softmax_ce(instances, seed + 2),
        grad_deconv3d(instances, seed + 3),
        grad_unpool(instances, seed + 4),
        grad_piecewise(instances, seed + 5),
        grad_refiner_stage(instances, seed + 6),
    ]
}

// ---------------------------------------------------------------------------
// Mean field

pub struct MeanFieldCheck {
    /// Largest per-node total variation between mean field and exact.
    pub max_tv: f64,
    /// Largest deviation from `softmax(-phi)` when `psi = 0`.
    pub max_independent_diff: f64,
}

pub fn mean_field_vs_exact(graphs: usize, seed: u64) -> MeanFieldCheck {
    let mut rng = seeded(seed);
    let k = 3;
    let cfg = MeanFieldConfig {
        iterations: 200,
        tolerance: 1e-12,
    };
    let (mut max_tv, mut max_ind) = (0.0f64, 0.0f64);
    for _ in 0..graphs {
        let (h, w) = loop {
            let hw = (rng.random_range(1..=2), rng.random_range(1..=3));
            if hw.0 * hw.1 >= 2 {
                break hw;
            }
        };
        let graph = random_graph(h, w, 1, 1, k, &mut rng);
        let m = graph.nodes();
        let phi: Vec<f64> = (0..m * k).map(|_| rng.random_range(-2.0..2.0)).collect();
        let psi: Vec<f64> = (0..graph.edges.len() * k * k)
            .map(|_| rng.random_range(-0.1..0.1))
            .collect();
        let weights = vec![1.0; graph.edges.len()];
        let (mf, _) = mean_field_with_weights(&graph, &phi, &psi, &weights, &cfg).unwrap();
        let (exact, _) = exact_with_weights(&graph, &phi, &psi, &weights).unwrap();
        for p in 0..m {
            let tv = 0.5
                * mf.row(p)
                    .iter()
                    .zip(exact.row(p))
                    .map(|(a, b)| (a - b).abs())
                    .sum::<f64>();
            max_tv = max_tv.max(tv);
        }
        let zero = vec![0.0; psi.len()];
        let (ind, _) = mean_field_with_weights(&graph, &phi, &zero, &weights, &cfg).unwrap();
        for p in 0..m {
            let neg: Vec<f64> = phi[p * k..(p + 1) * k].iter().map(|v| -v).collect();
            let want = softmax(&neg).unwrap();
            for (a, b) in ind.row(p).iter().zip(&want) {
                max_ind = max_ind.max((a - b).abs());
            }
        }
    }
    MeanFieldCheck {
        max_tv,
        max_independent_diff: max_ind,
    }
}

// ---------------------------------------------------------------------------
// Augmentation

pub fn asymmetric_patch(m: usize, l: usize, seed: u64) -> LabeledPatch {
    let mut rng = seeded(seed);
    LabeledPatch {
        data: random_tensor(&[m, m, l], &mut rng),
        center: (0, 0),
        group_index: 0,
        label: 1,
    }
}

pub struct AugmentCheck {
    pub variants: usize,
    pub pairwise_distinct: bool,
    pub fusion_identity: bool,
}

pub fn augmentation_check(seed: u64) -> AugmentCheck {
    let p = asymmetric_patch(5, 3, seed);
    let v = geometric_augment(&p).unwrap();
    let mut distinct = true;
    for i in 0..v.len() {
        distinct &= v[i].data != p.data;
        for j in i + 1..v.len() {
            distinct &= v[i].data != v[j].data;
        }
    }
    let other = asymmetric_patch(5, 3, seed + 1);
    let cfg = AugmentConfig {
        alpha_low: 1.0,
        alpha_high: 1.0,
        beta_sigma: 0.0,
        ..AugmentConfig::default()
    };
    let fused = fuse_virtual_sample(&p, &other, &cfg, &mut seeded(seed)).unwrap();
    let identical = fused
        .data
        .data()
        .iter()
        .zip(p.data.data())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    AugmentCheck {
        variants: v.len(),
        pairwise_distinct: distinct,
        fusion_identity: identical && fused.data.shape() == p.data.shape(),
    }
}

// ---------------------------------------------------------------------------
// Student t oracle

/// `ln Gamma(x)` by the Lanczos approximation (g = 7, 9 terms).
pub fn ln_gamma(x: f64) -> f64 {
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + 7.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Two-sided tail `P(|T| > t)` for `nu` degrees of freedom, by composite
/// Simpson integration of the density over `[0, |t|]`.
pub fn t_two_sided_p(t: f64, nu: f64) -> f64 {
    let t = t.abs();
    let log_c = ln_gamma((nu + 1.0) / 2.0) - ln_gamma(nu / 2.0) - 0.5 * (nu * std::f64::consts::PI).ln();
    let density = |s: f64| (log_c - (nu + 1.0) / 2.0 * (1.0 + s * s / nu).ln()).exp();
    let n = 20_000;
    let h = t / n as f64;
    let mut sum = density(0.0) + density(t);
    for i in 1..n {
        sum += density(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    let half_mass = sum * h / 3.0;
    (1.0 - 2.0 * half_mass).clamp(0.0, 1.0)
}

/// Mean and sample standard deviation, computed without the library.
fn mean_sd(d: &[f64]) -> (f64, f64) {
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub struct TTestCheck {
    pub max_p_diff: f64,
    pub identical_p: f64,
}

pub fn t_test_check(samples: usize, seed: u64) -> TTestCheck {
    let mut rng = seeded(seed);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let n = rng.random_range(3..=12);
        let shift = rng.random_range(-1.0..1.0);
        let a: Vec<f64> = (0..n).map(|_| 90.0 + rng.random_range(-2.0..2.0)).collect();
        let b: Vec<f64> = a.iter().map(|x| x + shift + rng.random_range(-1.5..1.5)).collect();
        let got = paired_t_test(&a, &b).unwrap();
        let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let (mean, sd) = mean_sd(&d);
        let t = mean / (sd / (n as f64).sqrt());
        worst = worst.max((got.p - t_two_sided_p(t, n as f64 - 1.0)).abs());
    }
    let x: Vec<f64> = (0..10).map(|_| rng.random_range(80.0..100.0)).collect();
    TTestCheck {
        max_p_diff: worst,
        identical_p: paired_t_test(&x, &x).unwrap().p,
    }
}

// ---------------------------------------------------------------------------
// Piecewise training sanity

pub fn toy_graph_set(seed: u64) -> Vec<TrainingGraph> {
    let mut rng = seeded(seed);
    (0..4).map(|_| toy_training_graph(4, 4, 2, 2, 3, &mut rng)).collect()
}

pub struct PiecewiseCheck {
    /// `|loss - (M log K + N log K^2)|` summed over the toy set with zeroed nets.
    pub init_diff: f64,
    pub curve: Vec<f64>,
}

impl PiecewiseCheck {
    pub fn monotone(&self) -> bool {
        self.curve.windows(2).all(|w| w[1] < w[0])
    }
}

pub fn piecewise_sanity(seed: u64) -> PiecewiseCheck {
    use hyperseg_core::crf::piecewise_train;
    use hyperseg_core::nn::SgdConfig;

    let graphs = toy_graph_set(seed);
    let spec = tiny_seg_spec();
    let k = 3;
    let mut rng = seeded(seed);
    let nets = PotentialNets::<f32>::init(&spec, &spec, 2, k, Placement::Pairwise, &mut rng).unwrap();

    let mut zeroed = nets.clone();
    for s in zeroed
        .unary
        .slices_mut()
        .into_iter()
        .chain(zeroed.pairwise.slices_mut())
    {
        s.fill(0.0);
    }
    let (mut got, mut want) = (0.0, 0.0);
    for g in &graphs {
        got += piecewise_loss(&zeroed, g).unwrap();
        let (m, n) = (g.graph.nodes() as f64, g.graph.edges.len() as f64);
        want += m * (k as f64).ln() + n * ((k * k) as f64).ln();
    }

    let sgd = SgdConfig {
        learning_rate: 0.1,
        batch_size: graphs.len(),
        epochs: 10,
        seed,
    };
    let (_, curve) = piecewise_train(&graphs, &[], nets, &sgd).unwrap();
    PiecewiseCheck {
        init_diff: (got - want).abs(),
        curve: curve.train,
    }
}
