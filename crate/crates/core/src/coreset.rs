//! Coreset baselines: select original training nodes (class-stratified to
//! the same per-class counts as label synthesis) and keep the induced
//! hyperedges. Selection distances run over diffused features; the induced
//! data keeps the raw features.

use crate::condense::synthesize_labels;
use crate::error::{Error, Result};
use crate::hypergraph::Hypergraph;
use crate::mat::Mat;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoresetMethod {
    Random,
    Herding,
    KCenter,
}

impl CoresetMethod {
    pub fn name(&self) -> &'static str {
        match self {
            CoresetMethod::Random => "random",
            CoresetMethod::Herding => "herding",
            CoresetMethod::KCenter => "kcenter",
        }
    }
}

impl std::str::FromStr for CoresetMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(CoresetMethod::Random),
            "herding" => Ok(CoresetMethod::Herding),
            "kcenter" => Ok(CoresetMethod::KCenter),
            other => Err(Error::Config(format!("unknown coreset method `{other}`"))),
        }
    }
}

/// Selected original node ids, sorted ascending.
pub fn select_coreset(
    h: &Hypergraph,
    x_tilde: &Mat,
    method: CoresetMethod,
    ratio: f64,
    seed: u64,
) -> Result<Vec<usize>> {
    let labels = synthesize_labels(h, ratio)?;
    let mut quota = vec![0usize; h.num_classes()];
    for &c in &labels {
        quota[c] += 1;
    }
    let pools = h.train_by_class();
    let mut selected = Vec::new();
    for (class, pool) in pools.iter().enumerate() {
        let want = quota[class];
        if pool.len() <= want {
            if pool.len() < want {
                log::warn!(
                    "class {class} pool has {} nodes < quota {want}; taking all",
                    pool.len()
                );
            }
            selected.extend_from_slice(pool);
            continue;
        }
        let picks = match method {
            CoresetMethod::Random => {
                let mut r = rng::stream(seed, "coreset", class as u64);
                rng::sample_without_replacement(&mut r, pool.len(), want)
                    .into_iter()
                    .map(|k| pool[k])
                    .collect::<Vec<_>>()
            }
            CoresetMethod::Herding => herding(pool, x_tilde, want),
            CoresetMethod::KCenter => k_center(pool, x_tilde, want),
        };
        selected.extend(picks);
    }
    selected.sort_unstable();
    Ok(selected)
}

fn class_mean(pool: &[usize], x: &Mat) -> Vec<f64> {
    let mut mean = vec![0.0; x.cols()];
    for &i in pool {
        for (m, &v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    let inv = 1.0 / pool.len() as f64;
    mean.iter_mut().for_each(|m| *m *= inv);
    mean
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// Greedy herding: each step picks the candidate whose inclusion brings the
/// running selection mean closest to the class mean. Ties go to the lower
/// node id (pool order is ascending).
fn herding(pool: &[usize], x: &Mat, want: usize) -> Vec<usize> {
    let mean = class_mean(pool, x);
    let d = x.cols();
    let mut picked = vec![false; pool.len()];
    let mut sum = vec![0.0; d];
    let mut out = Vec::with_capacity(want);
    for k in 0..want {
        let inv = 1.0 / (k + 1) as f64;
        let mut best: Option<(f64, usize)> = None;
        for (pi, &node) in pool.iter().enumerate() {
            if picked[pi] {
                continue;
            }
            let row = x.row(node);
            let dist: f64 = mean
                .iter()
                .zip(sum.iter().zip(row))
                .map(|(&m, (&s, &v))| {
                    let cand = (s + v) * inv;
                    (m - cand) * (m - cand)
                })
                .sum();
            if best.map_or(true, |(b, _)| dist < b) {
                best = Some((dist, pi));
            }
        }
        let (_, pi) = best.expect("pool larger than quota");
        picked[pi] = true;
        for (s, &v) in sum.iter_mut().zip(x.row(pool[pi])) {
            *s += v;
        }
        out.push(pool[pi]);
    }
    out
}

/// Greedy farthest-point traversal seeded at the node nearest the class
/// mean. Ties go to the lower node id.
fn k_center(pool: &[usize], x: &Mat, want: usize) -> Vec<usize> {
    let mean = class_mean(pool, x);
    let mut seed_pick = 0usize;
    let mut best = f64::INFINITY;
    for (pi, &node) in pool.iter().enumerate() {
        let dist = dist2(&mean, x.row(node));
        if dist < best {
            best = dist;
            seed_pick = pi;
        }
    }
    let mut out = vec![pool[seed_pick]];
    let mut min_d: Vec<f64> = pool.iter().map(|&n| dist2(x.row(pool[seed_pick]), x.row(n))).collect();
    while out.len() < want {
        let mut far = 0usize;
        let mut far_d = f64::NEG_INFINITY;
        for (pi, &d) in min_d.iter().enumerate() {
            if d > far_d {
                far_d = d;
                far = pi;
            }
        }
        out.push(pool[far]);
        for (pi, &node) in pool.iter().enumerate() {
            let d = dist2(x.row(pool[far]), x.row(node));
            if d < min_d[pi] {
                min_d[pi] = d;
            }
        }
    }
    out
}

/// Restriction of the original hypergraph to the selection: raw features,
/// hyperedges intersected with the selection, hyperedges left with no member
/// dropped, labels via the audited accessor (selected nodes are training
/// nodes, so the audit stays clean).
pub fn induced_subhypergraph(h: &Hypergraph, selected: &[usize]) -> Result<Hypergraph> {
    let mut local = vec![usize::MAX; h.num_nodes()];
    for (li, &gi) in selected.iter().enumerate() {
        local[gi] = li;
    }
    let mut edges = Vec::new();
    for e in 0..h.num_edges() {
        let members: Vec<u32> = h
            .edge_nodes()
            .row(e)
            .iter()
            .filter_map(|&v| {
                let l = local[v as usize];
                (l != usize::MAX).then_some(l as u32)
            })
            .collect();
        if !members.is_empty() {
            edges.push(members);
        }
    }
    let mut feats = Mat::zeros(selected.len(), h.feature_dim());
    for (li, &gi) in selected.iter().enumerate() {
        feats.row_mut(li).copy_from_slice(h.features().row(gi));
    }
    let labels: Vec<usize> = selected.iter().map(|&gi| h.label(gi)).collect();
    Hypergraph::new(edges, feats, labels, h.num_classes())
}
