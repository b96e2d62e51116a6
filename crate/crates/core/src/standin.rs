//! Synthetic dataset generators.
//!
//! `generate_standin` builds a class-correlated attributed hypergraph with
//! exact node/edge/membership counts: Gaussian class blobs with low per-node
//! signal-to-noise, plus homophilous hyperedges, so structure-aware methods
//! have something real to exploit. `random_hypergraph` is the small
//! unstructured generator used by the numerical verification checks.

use rand::Rng;

use crate::error::Result;
use crate::hypergraph::{largest_remainder, Hypergraph};
use crate::mat::Mat;
use crate::rng;

#[derive(Debug, Clone)]
pub struct StandinParams {
    pub nodes: usize,
    pub edges: usize,
    /// Exact total membership count (sum of hyperedge sizes).
    pub total_membership: usize,
    pub classes: usize,
    pub dim: usize,
    /// Probability that a hyperedge slot stays within the anchor's class.
    pub homophily: f64,
    /// Per-dimension feature noise.
    pub noise: f64,
    /// Scale of the class-mean directions.
    pub separation: f64,
    pub seed: u64,
}

impl StandinParams {
    /// Co-citation-scale defaults: 2708 nodes, 1579 hyperedges, 7494 total
    /// memberships, 7 imbalanced classes. Noise and separation are
    /// calibrated so raw per-node features are weak while diffused
    /// neighborhoods are informative.
    pub fn cora_scale(seed: u64) -> Self {
        StandinParams {
            nodes: 2708,
            edges: 1579,
            total_membership: 7494,
            classes: 7,
            dim: 512,
            homophily: 0.85,
            noise: 1.0,
            separation: 1.0,
            seed,
        }
    }
}

/// Class proportions shaped like a real co-citation benchmark: imbalanced,
/// with the largest class about 4.5x the smallest.
const CLASS_WEIGHTS: [f64; 7] = [0.130, 0.080, 0.154, 0.302, 0.157, 0.110, 0.067];

pub fn generate_standin(p: &StandinParams) -> Result<Hypergraph> {
    assert!(p.total_membership >= 2 * p.edges, "edges need at least two slots");
    assert!(p.total_membership >= p.nodes, "every node must fit somewhere");
    let weights: Vec<f64> = (0..p.classes)
        .map(|c| CLASS_WEIGHTS[c % CLASS_WEIGHTS.len()])
        .collect();
    let class_counts = largest_remainder(p.nodes, &weights);

    // labels: class blocks, then a seeded shuffle
    let mut labels = Vec::with_capacity(p.nodes);
    for (c, &count) in class_counts.iter().enumerate() {
        labels.extend(std::iter::repeat(c).take(count));
    }
    let mut r = rng::stream(p.seed, "standin-labels", 0);
    for i in (1..labels.len()).rev() {
        let j = r.gen_range(0..=i);
        labels.swap(i, j);
    }
    let mut by_class = vec![Vec::new(); p.classes];
    for (i, &c) in labels.iter().enumerate() {
        by_class[c].push(i as u32);
    }

    // features: unit class directions scaled by `separation`, plus noise
    let mut r = rng::stream(p.seed, "standin-features", 0);
    let mut means = Mat::zeros(p.classes, p.dim);
    for c in 0..p.classes {
        let row = means.row_mut(c);
        let mut norm = 0.0;
        for v in row.iter_mut() {
            *v = rng::normal(&mut r);
            norm += *v * *v;
        }
        let scale = p.separation / norm.sqrt();
        row.iter_mut().for_each(|v| *v *= scale);
    }
    let mut features = Mat::zeros(p.nodes, p.dim);
    for i in 0..p.nodes {
        let c = labels[i];
        for (j, v) in features.row_mut(i).iter_mut().enumerate() {
            *v = means.get(c, j) + p.noise * rng::normal(&mut r);
        }
    }

    // hyperedge sizes: start at 2, sprinkle the remaining memberships
    let mut r = rng::stream(p.seed, "standin-edges", 0);
    let mut sizes = vec![2usize; p.edges];
    for _ in 0..p.total_membership - 2 * p.edges {
        sizes[r.gen_range(0..p.edges)] += 1;
    }

    // members: anchor node per edge, homophilous slot fills, all distinct
    let mut edges: Vec<Vec<u32>> = Vec::with_capacity(p.edges);
    for &size in &sizes {
        let anchor = r.gen_range(0..p.nodes) as u32;
        let class = labels[anchor as usize];
        let mut members = vec![anchor];
        while members.len() < size {
            let candidate = if r.gen::<f64>() < p.homophily {
                let pool = &by_class[class];
                pool[r.gen_range(0..pool.len())]
            } else {
                r.gen_range(0..p.nodes) as u32
            };
            if !members.contains(&candidate) {
                members.push(candidate);
            }
        }
        edges.push(members);
    }

    // coverage repair: swap uncovered nodes in for members that appear in
    // several edges, keeping every size (and the total) intact
    let mut count = vec![0usize; p.nodes];
    for e in &edges {
        for &v in e {
            count[v as usize] += 1;
        }
    }
    let mut scan_edge = 0usize;
    for node in 0..p.nodes as u32 {
        if count[node as usize] > 0 {
            continue;
        }
        let mut placed = false;
        for offset in 0..edges.len() {
            let e = (scan_edge + offset) % edges.len();
            if edges[e].contains(&node) {
                continue;
            }
            // evict the member with the most memberships, ties to low id
            let victim = edges[e]
                .iter()
                .enumerate()
                .filter(|(_, &m)| count[m as usize] >= 2)
                .max_by_key(|&(_, &m)| (count[m as usize], std::cmp::Reverse(m)))
                .map(|(slot, _)| slot);
            if let Some(slot) = victim {
                let old = edges[e][slot];
                count[old as usize] -= 1;
                edges[e][slot] = node;
                count[node as usize] += 1;
                scan_edge = (e + 1) % edges.len();
                placed = true;
                break;
            }
        }
        assert!(placed, "coverage repair found no multi-membership victim");
    }

    Hypergraph::new(edges, features, labels, p.classes)
}

/// Small uniform random hypergraph (for verification checks): `m` edges of
/// size 2..=max_size with distinct members, Gaussian features.
pub fn random_hypergraph(
    n: usize,
    m: usize,
    max_size: usize,
    dim: usize,
    seed: u64,
) -> Result<Hypergraph> {
    let mut r = rng::stream(seed, "random-hypergraph", 0);
    let mut edges = Vec::with_capacity(m);
    for _ in 0..m {
        let size = r.gen_range(2..=max_size.min(n));
        let members: Vec<u32> = rng::sample_without_replacement(&mut r, n, size)
            .into_iter()
            .map(|v| v as u32)
            .collect();
        edges.push(members);
    }
    let features = Mat::from_vec(n, dim, (0..n * dim).map(|_| rng::normal(&mut r)).collect());
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    Hypergraph::new(edges, features, labels, 2)
}
