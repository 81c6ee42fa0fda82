use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::graph::{gaussian_edge_weights, CrfGraph, KernelParams};
use crate::error::{Error, Result};
use crate::nn::activation::softmax_into;

/// Approximate per-node marginals, `M x K` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginalField {
    pub labels: usize,
    pub q: Vec<f64>,
}

impl MarginalField {
    pub fn row(&self, node: usize) -> &[f64] {
        &self.q[node * self.labels..(node + 1) * self.labels]
    }

    pub fn nodes(&self) -> usize {
        self.q.len() / self.labels
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldConfig {
    pub iterations: usize,
    /// Stop once the largest per-node total-variation change falls below.
    pub tolerance: f64,
}

impl Default for MeanFieldConfig {
    fn default() -> Self {
        MeanFieldConfig {
            iterations: 10,
            tolerance: 1e-4,
        }
    }
}

fn check_tables(graph: &CrfGraph, phi: &[f64], psi: &[f64]) -> Result<()> {
    let k = graph.labels;
    if phi.len() != graph.nodes() * k {
        return Err(Error::shape("unary table", &[graph.nodes(), k], &[phi.len()]));
    }
    if psi.len() != graph.edges.len() * k * k {
        return Err(Error::shape("pairwise table", &[graph.edges.len(), k, k], &[psi.len()]));
    }
    Ok(())
}

/// Mean-field updates with explicit per-edge kernel weights. Returns the
/// marginals and the number of iterations run.
pub fn mean_field_with_weights(
    graph: &CrfGraph,
    phi: &[f64],
    psi: &[f64],
    weights: &[f64],
    cfg: &MeanFieldConfig,
) -> Result<(MarginalField, usize)> {
    check_tables(graph, phi, psi)?;
    if weights.len() != graph.edges.len() {
        return Err(Error::shape("edge weights", &[graph.edges.len()], &[weights.len()]));
    }
    let k = graph.labels;
    let adj = graph.adjacency();
    let mut q = vec![0.0; phi.len()];
    let neg: Vec<f64> = phi.iter().map(|v| -v).collect();
    for (row, src) in q.chunks_exact_mut(k).zip(neg.chunks_exact(k)) {
        softmax_into(src, row);
    }
    let mut next = q.clone();
    let mut run = 0;
    for it in 0..cfg.iterations {
        next.par_chunks_exact_mut(k).enumerate().for_each(|(p, row)| {
            let mut logits = neg[p * k..(p + 1) * k].to_vec();
            for &(e, other, first) in &adj[p] {
                let w = weights[e];
                let table = &psi[e * k * k..(e + 1) * k * k];
                let qo = &q[other * k..(other + 1) * k];
                for (l, v) in logits.iter_mut().enumerate() {
                    let mut m = 0.0;
                    for (l2, qv) in qo.iter().enumerate() {
                        let pair = if first { table[l * k + l2] } else { table[l2 * k + l] };
                        m += pair * qv;
                    }
                    *v -= w * m;
                }
            }
            softmax_into(&logits, row);
        });
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                stage: "mean-field",
                iteration: it + 1,
            });
        }
        let change = q
            .chunks_exact(k)
            .zip(next.chunks_exact(k))
            .map(|(a, b)| 0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>())
            .fold(0.0, f64::max);
        std::mem::swap(&mut q, &mut next);
        run = it + 1;
        if change < cfg.tolerance {
            break;
        }
    }
    Ok((MarginalField { labels: k, q }, run))
}

pub fn mean_field_infer(
    graph: &CrfGraph,
    phi: &[f64],
    psi: &[f64],
    kp: &KernelParams,
    cfg: &MeanFieldConfig,
) -> Result<MarginalField> {
    let w = gaussian_edge_weights(graph, kp)?;
    Ok(mean_field_with_weights(graph, phi, psi, &w, cfg)?.0)
}

/// `sum phi(p, l_p) + sum_e w_e psi_e(l_p, l_q)`.
pub fn energy(graph: &CrfGraph, phi: &[f64], psi: &[f64], weights: &[f64], labeling: &[usize]) -> f64 {
    let k = graph.labels;
    let unary: f64 = labeling.iter().enumerate().map(|(p, &l)| phi[p * k + l]).sum();
    let pair: f64 = graph
        .edges
        .iter()
        .enumerate()
        .map(|(e, &(p, q))| weights[e] * psi[e * k * k + labeling[p] * k + labeling[q]])
        .sum();
    unary + pair
}

pub const MAX_LABELINGS: f64 = 1e6;

/// Exact marginals and the minimum-energy labeling by enumeration.
pub fn exact_infer_oracle(
    graph: &CrfGraph,
    phi: &[f64],
    psi: &[f64],
    kp: &KernelParams,
) -> Result<(MarginalField, Vec<usize>)> {
    check_tables(graph, phi, psi)?;
    let weights = gaussian_edge_weights(graph, kp)?;
    exact_with_weights(graph, phi, psi, &weights)
}

pub fn exact_with_weights(
    graph: &CrfGraph,
    phi: &[f64],
    psi: &[f64],
    weights: &[f64],
) -> Result<(MarginalField, Vec<usize>)> {
    check_tables(graph, phi, psi)?;
    let (k, m) = (graph.labels, graph.nodes());
    let labelings = (k as f64).powi(m as i32);
    if labelings > MAX_LABELINGS {
        return Err(Error::TooLarge { labelings });
    }
    let total = labelings as usize;
    let mut labeling = vec![0usize; m];
    let energies: Vec<f64> = (0..total)
        .map(|i| {
            let mut r = i;
            for l in labeling.iter_mut() {
                *l = r % k;
                r /= k;
            }
            energy(graph, phi, psi, weights, &labeling)
        })
        .collect();
    let min = energies.iter().copied().fold(f64::INFINITY, f64::min);
    let z: f64 = energies.iter().map(|e| (min - e).exp()).sum();
    let mut q = vec![0.0; m * k];
    let mut best = 0;
    for (i, e) in energies.iter().enumerate() {
        if *e < energies[best] {
            best = i;
        }
        let w = (min - e).exp() / z;
        let mut r = i;
        for p in 0..m {
            q[p * k + r % k] += w;
            r /= k;
        }
    }
    let mut map = vec![0; m];
    let mut r = best;
    for l in map.iter_mut() {
        *l = r % k;
        r /= k;
    }
    Ok((MarginalField { labels: k, q }, map))
}
