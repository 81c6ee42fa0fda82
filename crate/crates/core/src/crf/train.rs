use log::debug;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::graph::CrfGraph;
use super::potentials::{PotentialGrads, PotentialNets};
use crate::cnn::LossCurve;
use crate::error::{Error, Result};
use crate::nn::activation::softmax_into;
use crate::nn::SgdConfig;
use crate::rng;
use crate::tensor::{Scalar, Tensor};

/// A graph with a ground-truth label index (0-based) for every node.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingGraph {
    pub graph: CrfGraph,
    pub labels: Vec<usize>,
}

impl TrainingGraph {
    pub fn new(graph: CrfGraph, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != graph.nodes() {
            return Err(Error::MissingLabels(format!(
                "{} labels for {} nodes",
                labels.len(),
                graph.nodes()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= graph.labels) {
            return Err(Error::MissingLabels(format!(
                "label index {bad} outside 0..{}",
                graph.labels
            )));
        }
        Ok(TrainingGraph { graph, labels })
    }

    /// Node and edge term counts, `M + N`.
    pub fn terms(&self) -> usize {
        self.graph.nodes() + self.graph.edges.len()
    }
}

/// `-sum_p log P(l_p) - sum_e log P(l_p, l_q)` with node and edge softmaxes
/// over `-phi` and `-psi`, and its gradient.
pub fn piecewise_loss_and_grad<T: Scalar>(
    nets: &PotentialNets<T>,
    tg: &TrainingGraph,
) -> Result<(f64, PotentialGrads<T>)> {
    let graph = &tg.graph;
    let k = nets.classes;
    let trace = nets.forward(graph)?;
    let pot = nets.potentials(&trace)?;
    let m = graph.nodes();
    let mut loss = 0.0;

    let mut grad_scores = vec![T::default(); k * m];
    let mut prob = vec![0.0; k * k];
    let mut neg = vec![0.0; k * k];
    for p in 0..m {
        let l = tg.labels[p];
        for (n, v) in neg[..k].iter_mut().zip(&pot.phi[p * k..(p + 1) * k]) {
            *n = -v;
        }
        softmax_into(&neg[..k], &mut prob[..k]);
        loss += pot.phi[p * k + l] + log_norm(&neg[..k]);
        for c in 0..k {
            let onehot = if c == l { 1.0 } else { 0.0 };
            grad_scores[c * m + p] = T::from_f64(prob[c] - onehot);
        }
    }

    let mu: Vec<f64> = nets.mu.data().iter().map(|v| v.to_f64()).collect();
    let mut grad_delta = vec![0.0; graph.edges.len() * k * k];
    let mut grad_mu = vec![0.0; k * k];
    for (e, &(p, q)) in graph.edges.iter().enumerate() {
        let psi = &pot.psi[e * k * k..(e + 1) * k * k];
        let target = tg.labels[p] * k + tg.labels[q];
        for (n, v) in neg.iter_mut().zip(psi) {
            *n = -v;
        }
        softmax_into(&neg, &mut prob);
        loss += psi[target] + log_norm(&neg);
        let delta = &trace.delta[e * k * k..(e + 1) * k * k];
        for j in 0..k * k {
            let g_psi = if j == target { 1.0 } else { 0.0 } - prob[j];
            grad_delta[e * k * k + j] = g_psi * mu[j];
            grad_mu[j] += g_psi * delta[j];
        }
    }
    let (h, w, d) = (graph.height(), graph.width(), graph.depth());
    let grad_scores = Tensor::new([k, h, w, d], grad_scores)?;
    let grad_mu = Tensor::new([k, k], grad_mu.into_iter().map(T::from_f64).collect())?;
    let grads = nets.backward(graph, &trace, &grad_scores, &grad_delta, grad_mu)?;
    Ok((loss, grads))
}

fn log_norm(neg: &[f64]) -> f64 {
    crate::nn::activation::log_sum_exp(neg)
}

pub fn piecewise_loss<T: Scalar>(nets: &PotentialNets<T>, tg: &TrainingGraph) -> Result<f64> {
    let graph = &tg.graph;
    let k = nets.classes;
    let pot = nets.evaluate(graph)?;
    let mut loss = 0.0;
    let mut neg = vec![0.0; k * k];
    for (p, &l) in tg.labels.iter().enumerate() {
        for (n, v) in neg[..k].iter_mut().zip(&pot.phi[p * k..(p + 1) * k]) {
            *n = -v;
        }
        loss += pot.phi[p * k + l] + log_norm(&neg[..k]);
    }
    for (e, &(p, q)) in graph.edges.iter().enumerate() {
        let psi = &pot.psi[e * k * k..(e + 1) * k * k];
        for (n, v) in neg.iter_mut().zip(psi) {
            *n = -v;
        }
        loss += psi[tg.labels[p] * k + tg.labels[q]] + log_norm(&neg);
    }
    Ok(loss)
}

/// Gradient descent on the piecewise objective. Each graph's gradient is
/// divided by its term count `M + N`; a mini-batch averages those. The loss
/// curve records the summed objective over the training set.
pub fn piecewise_train(
    graphs: &[TrainingGraph],
    val: &[TrainingGraph],
    mut nets: PotentialNets,
    sgd: &SgdConfig,
) -> Result<(PotentialNets, LossCurve)> {
    sgd.validate()?;
    if graphs.is_empty() {
        return Err(Error::MissingLabels("no training graphs".into()));
    }
    let mut rng = rng::substream(sgd.seed, 1 << 32);
    let mut order: Vec<usize> = (0..graphs.len()).collect();
    let mut curve = LossCurve::default();
    for epoch in 0..sgd.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(sgd.batch_size) {
            let results = batch
                .par_iter()
                .map(|&i| piecewise_loss_and_grad(&nets, &graphs[i]).map(|r| (r, graphs[i].terms())))
                .collect::<Result<Vec<_>>>()?;
            let mut sum = nets.zero_grads();
            for ((loss, mut g), terms) in results {
                total += loss;
                g.scale(1.0 / terms as f64);
                sum.add_assign(&g)?;
            }
            sum.scale(1.0 / batch.len() as f64);
            nets.apply_gradient(&sum, sgd.learning_rate)?;
        }
        if !total.is_finite() || !nets.is_finite() {
            return Err(Error::Divergence {
                stage: "piecewise CRF training".into(),
                epoch: epoch + 1,
                loss: total,
            });
        }
        let val_loss = val.iter().map(|g| piecewise_loss(&nets, g)).sum::<Result<f64>>()?;
        debug!("crf epoch {}: train {total:.4} val {val_loss:.4}", epoch + 1);
        curve.train.push(total);
        curve.val.push(if val.is_empty() { f64::NAN } else { val_loss });
    }
    Ok((nets, curve))
}
