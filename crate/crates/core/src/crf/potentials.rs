use rand::Rng;

use super::graph::CrfGraph;
use crate::cnn::{NetworkParams, NetworkSpec, Topology, Trace};
use crate::error::{Error, Result};
use crate::nn::{softmax, Padding};
use crate::refiner::{build_refiner, upsample_through, upsample_through_adjoint, Placement, RefineTrace, Refiner};
use crate::tensor::{Scalar, Tensor};

/// The unary and pairwise networks, the label compatibility `mu` and the
/// refiner attached to one of the two paths.
#[derive(Clone, Debug, PartialEq)]
pub struct PotentialNets<T: Scalar = f32> {
    pub classes: usize,
    pub unary_spec: NetworkSpec,
    pub unary: NetworkParams<T>,
    pub pairwise_spec: NetworkSpec,
    pub pairwise: NetworkParams<T>,
    /// Row-major `K x K`.
    pub mu: Tensor<T>,
    pub learn_mu: bool,
    pub placement: Placement,
    pub refiner: Refiner<T>,
}

/// Gradients of every trainable part of [`PotentialNets`].
#[derive(Clone, Debug)]
pub struct PotentialGrads<T: Scalar = f32> {
    pub unary: NetworkParams<T>,
    pub pairwise: NetworkParams<T>,
    pub refiner: Vec<Tensor<T>>,
    pub mu: Tensor<T>,
}

/// `1 - I`.
pub fn potts<T: Scalar>(k: usize) -> Tensor<T> {
    Tensor::from_fn([k, k], |i| T::from_f64(if i / k == i % k { 0.0 } else { 1.0 }))
}

fn check_potential_spec(spec: &NetworkSpec) -> Result<()> {
    if spec.topology != Topology::FullyConvolutional || spec.padding != Padding::Same {
        return Err(Error::invalid(format!(
            "potential net {:?} must be fully convolutional with same padding",
            spec.name
        )));
    }
    Ok(())
}

impl<T: Scalar> PotentialNets<T> {
    /// Fresh nets for feature maps with `channels` channels per voxel.
    pub fn init<R: Rng + ?Sized>(
        unary_spec: &NetworkSpec,
        pairwise_spec: &NetworkSpec,
        channels: usize,
        classes: usize,
        placement: Placement,
        rng: &mut R,
    ) -> Result<Self> {
        if classes < 2 {
            return Err(Error::invalid("potential nets need at least 2 classes"));
        }
        let unary_spec = unary_spec.with_classes(classes);
        let pairwise_spec = pairwise_spec.with_classes(classes * classes);
        check_potential_spec(&unary_spec)?;
        check_potential_spec(&pairwise_spec)?;
        let unary = NetworkParams::init(&unary_spec, &[channels, 4, 4, 4], rng)?;
        let pairwise = NetworkParams::init(&pairwise_spec, &[2 * channels, 4, 4, 4], rng)?;
        let refiner_spec = match placement {
            Placement::Unary => build_refiner(&unary_spec, channels)?,
            Placement::Pairwise => build_refiner(&pairwise_spec, 2 * channels)?,
            Placement::None => crate::refiner::RefinerSpec {
                width: 0,
                stages: Vec::new(),
            },
        };
        Ok(PotentialNets {
            classes,
            unary_spec,
            unary,
            pairwise_spec,
            pairwise,
            mu: potts(classes),
            learn_mu: false,
            placement,
            refiner: Refiner::init(&refiner_spec),
        })
    }

    pub fn cast<U: Scalar>(&self) -> PotentialNets<U> {
        PotentialNets {
            classes: self.classes,
            unary_spec: self.unary_spec.clone(),
            unary: self.unary.cast(),
            pairwise_spec: self.pairwise_spec.clone(),
            pairwise: self.pairwise.cast(),
            mu: self.mu.cast(),
            learn_mu: self.learn_mu,
            placement: self.placement,
            refiner: self.refiner.cast(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.unary.is_finite()
            && self.pairwise.is_finite()
            && self.mu.is_finite()
            && self.refiner.kernels().iter().all(|k| k.is_finite())
    }

    pub fn zero_grads(&self) -> PotentialGrads<T> {
        PotentialGrads {
            unary: self.unary.zeros_like(),
            pairwise: self.pairwise.zeros_like(),
            refiner: self
                .refiner
                .kernels()
                .iter()
                .map(|k| Tensor::zeros(k.shape()))
                .collect(),
            mu: Tensor::zeros(self.mu.shape()),
        }
    }

    /// One descent step. `mu` moves only when learnable, and stays symmetric
    /// with a zero diagonal.
    pub fn apply_gradient(&mut self, g: &PotentialGrads<T>, learning_rate: f64) -> Result<()> {
        self.unary.apply_gradient(&g.unary, learning_rate)?;
        self.pairwise.apply_gradient(&g.pairwise, learning_rate)?;
        for (k, gk) in self.refiner.kernels_mut().into_iter().zip(&g.refiner) {
            crate::nn::sgd_step(k.data_mut(), gk.data(), learning_rate)?;
        }
        if self.learn_mu {
            let k = self.classes;
            let gm = g.mu.data();
            let m = self.mu.data_mut();
            for a in 0..k {
                for b in 0..k {
                    let sym = if a == b {
                        0.0
                    } else {
                        0.5 * (gm[a * k + b].to_f64() + gm[b * k + a].to_f64())
                    };
                    m[a * k + b] = T::from_f64(m[a * k + b].to_f64() - learning_rate * sym);
                }
            }
        }
        Ok(())
    }
}

impl<T: Scalar> PotentialGrads<T> {
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.unary.add_assign(&other.unary)?;
        self.pairwise.add_assign(&other.pairwise)?;
        for (a, b) in self
            .refiner
            .iter_mut()
            .zip(&other.refiner)
            .chain(std::iter::once((&mut self.mu, &other.mu)))
        {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x = T::from_f64(x.to_f64() + y.to_f64());
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        self.unary.scale(factor);
        self.pairwise.scale(factor);
        for t in self.refiner.iter_mut().chain(std::iter::once(&mut self.mu)) {
            for v in t.data_mut() {
                *v = T::from_f64(v.to_f64() * factor);
            }
        }
    }
}

/// A net's trace and, when its path is refined, the refiner's trace.
type PathTrace<T> = (Trace<T>, Option<RefineTrace<T>>);

/// Refiner kernel gradients in [`Refiner::kernels`] order.
type RefinerGrads<T> = Vec<Tensor<T>>;

/// Everything one potential evaluation produced, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct PotentialTrace<T: Scalar = f32> {
    unary_trace: Trace<T>,
    unary_refine: Option<RefineTrace<T>>,
    /// `(K, H, W, Z)` unary scores at voxel resolution.
    pub unary_scores: Tensor<T>,
    /// Horizontal then vertical edge grids.
    pair_traces: Vec<Option<PathTrace<T>>>,
    /// `N x K x K` edge scores, `delta[e][a][b]` for labels `a` at the first
    /// endpoint and `b` at the second.
    pub delta: Vec<f64>,
}

/// `phi` is `M x K`, `psi` is `N x K x K`.
#[derive(Clone, Debug, PartialEq)]
pub struct Potentials {
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
}

fn edge_grid<T: Scalar>(graph: &CrfGraph, horizontal: bool) -> Tensor<T> {
    let (h, w, d) = (graph.height(), graph.width(), graph.depth());
    let c = graph.features.channels();
    let (gh, gw) = if horizontal { (h, w - 1) } else { (h - 1, w) };
    let plane = gh * gw * d;
    let mut out = vec![T::default(); 2 * c * plane];
    for x in 0..gh {
        for y in 0..gw {
            for z in 0..d {
                let (qx, qy) = if horizontal { (x, y + 1) } else { (x + 1, y) };
                let (fp, fq) = (graph.features.voxel(x, y, z), graph.features.voxel(qx, qy, z));
                let cell = (x * gw + y) * d + z;
                for ch in 0..c {
                    out[ch * plane + cell] = T::from_f64(fp[ch] as f64);
                    out[(c + ch) * plane + cell] = T::from_f64(fq[ch] as f64);
                }
            }
        }
    }
    Tensor::new([2 * c, gh, gw, d], out).unwrap()
}

impl<T: Scalar> PotentialNets<T> {
    fn run(
        &self,
        spec: &NetworkSpec,
        params: &NetworkParams<T>,
        refined: bool,
        input: &Tensor<T>,
    ) -> Result<(PathTrace<T>, Tensor<T>)> {
        let trace = params.forward_trace(spec, input)?;
        if refined && !self.refiner.is_identity() {
            let rt = self.refiner.refine_trace(trace.output(), &trace.pools)?;
            let out = rt.output().unwrap().clone();
            Ok(((trace, Some(rt)), out))
        } else {
            let out = upsample_through(trace.output(), &trace.pools)?;
            Ok(((trace, None), out))
        }
    }

    pub fn forward(&self, graph: &CrfGraph) -> Result<PotentialTrace<T>> {
        if graph.labels != self.classes {
            return Err(Error::shape("potentials", &[self.classes], &[graph.labels]));
        }
        let maps: Tensor<T> = graph.features.to_maps().cast();
        let ((unary_trace, unary_refine), unary_scores) =
            self.run(&self.unary_spec, &self.unary, self.placement == Placement::Unary, &maps)?;
        let k2 = self.classes * self.classes;
        let mut delta = vec![0.0; graph.edges.len() * k2];
        let mut pair_traces = Vec::with_capacity(2);
        let mut offset = 0;
        for horizontal in [true, false] {
            let (h, w) = (graph.height(), graph.width());
            if (horizontal && w < 2) || (!horizontal && h < 2) {
                pair_traces.push(None);
                continue;
            }
            let grid = edge_grid::<T>(graph, horizontal);
            let ((t, rt), scores) = self.run(
                &self.pairwise_spec,
                &self.pairwise,
                self.placement == Placement::Pairwise,
                &grid,
            )?;
            let cells = scores.len() / k2;
            let s = scores.data();
            for e in 0..cells {
                for k in 0..k2 {
                    delta[(offset + e) * k2 + k] = s[k * cells + e].to_f64();
                }
            }
            offset += cells;
            pair_traces.push(Some((t, rt)));
        }
        Ok(PotentialTrace {
            unary_trace,
            unary_refine,
            unary_scores,
            pair_traces,
            delta,
        })
    }

    /// `phi = -log softmax(unary scores)` per node and `psi = mu * delta` per
    /// edge.
    pub fn potentials(&self, trace: &PotentialTrace<T>) -> Result<Potentials> {
        let k = self.classes;
        let s = trace.unary_scores.data();
        let m = s.len() / k;
        let mut phi = vec![0.0; m * k];
        let mut logits = vec![0.0; k];
        for p in 0..m {
            for (l, v) in logits.iter_mut().enumerate() {
                *v = s[l * m + p].to_f64();
            }
            let lse = crate::nn::activation::log_sum_exp(&logits);
            for l in 0..k {
                phi[p * k + l] = lse - logits[l];
            }
        }
        let mu: Vec<f64> = self.mu.data().iter().map(|v| v.to_f64()).collect();
        let psi = trace
            .delta
            .chunks_exact(k * k)
            .flat_map(|d| d.iter().zip(&mu).map(|(a, b)| a * b).collect::<Vec<_>>())
            .collect();
        if phi.iter().any(|v: &f64| !v.is_finite()) {
            return Err(Error::NonFinite {
                stage: "unary potentials",
                iteration: 0,
            });
        }
        Ok(Potentials { phi, psi })
    }

    pub fn evaluate(&self, graph: &CrfGraph) -> Result<Potentials> {
        self.potentials(&self.forward(graph)?)
    }

    /// Gradients given `d loss / d unary scores` (`(K, H, W, Z)`),
    /// `d loss / d delta` and `d loss / d mu`.
    pub fn backward(
        &self,
        graph: &CrfGraph,
        trace: &PotentialTrace<T>,
        grad_scores: &Tensor<T>,
        grad_delta: &[f64],
        grad_mu: Tensor<T>,
    ) -> Result<PotentialGrads<T>> {
        let mut grads = self.zero_grads();
        grads.mu = grad_mu;
        let (ug, rg) = self.path_backward(
            &self.unary_spec,
            &self.unary,
            &trace.unary_trace,
            trace.unary_refine.as_ref(),
            grad_scores,
        )?;
        grads.unary = ug;
        if let Some(rg) = rg {
            grads.refiner = rg;
        }
        let k2 = self.classes * self.classes;
        let mut offset = 0;
        for (horizontal, slot) in [true, false].into_iter().zip(&trace.pair_traces) {
            let Some((t, rt)) = slot else { continue };
            let (h, w, d) = (graph.height(), graph.width(), graph.depth());
            let (gh, gw) = if horizontal { (h, w - 1) } else { (h - 1, w) };
            let cells = gh * gw * d;
            let mut g = vec![T::default(); k2 * cells];
            for e in 0..cells {
                for k in 0..k2 {
                    g[k * cells + e] = T::from_f64(grad_delta[(offset + e) * k2 + k]);
                }
            }
            offset += cells;
            let g = Tensor::new([k2, gh, gw, d], g)?;
            let (pg, rg) = self.path_backward(&self.pairwise_spec, &self.pairwise, t, rt.as_ref(), &g)?;
            grads.pairwise.add_assign(&pg)?;
            if let Some(rg) = rg {
                for (a, b) in grads.refiner.iter_mut().zip(&rg) {
                    for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                        *x = T::from_f64(x.to_f64() + y.to_f64());
                    }
                }
            }
        }
        Ok(grads)
    }

    fn path_backward(
        &self,
        spec: &NetworkSpec,
        params: &NetworkParams<T>,
        trace: &Trace<T>,
        refine: Option<&RefineTrace<T>>,
        grad: &Tensor<T>,
    ) -> Result<(NetworkParams<T>, Option<RefinerGrads<T>>)> {
        let (g_coarse, rg) = match refine {
            Some(rt) => {
                let (kg, g) = self.refiner.backward(rt, &trace.pools, grad)?;
                (g, Some(kg.into_iter().flatten().collect()))
            }
            None => (upsample_through_adjoint(grad, &trace.pools)?, None),
        };
        let (pg, _) = params.backward(spec, trace, &g_coarse)?;
        Ok((pg, rg))
    }
}

/// Node and edge probabilities under the local normalisations used by
/// piecewise training.
pub fn local_probabilities(pot: &Potentials, k: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let node = pot
        .phi
        .chunks_exact(k)
        .map(|row| softmax(&row.iter().map(|v| -v).collect::<Vec<_>>()))
        .collect::<Result<Vec<_>>>()?
        .concat();
    let edge = pot
        .psi
        .chunks_exact(k * k)
        .map(|row| softmax(&row.iter().map(|v| -v).collect::<Vec<_>>()))
        .collect::<Result<Vec<_>>>()?
        .concat();
    Ok((node, edge))
}
