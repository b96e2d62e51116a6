//! Hypergraph representation: incidence views, degrees, stratified splits and
//! the symmetric normalized propagation operator.
//!
//! The propagation operator is `P = Dv^{-1/2} H De^{-1} H^T Dv^{-1/2}`, kept
//! lazy: `P x` costs two passes over the incidence lists instead of
//! materializing the dense node-by-node matrix.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::rng;
use crate::sparse::{Incidence, SymOp};

/// Attributed hypergraph with train/val/test masks.
///
/// Labels are behind an audited accessor: reads of test-node labels are
/// counted so the evaluation protocol can prove condensation never saw them.
/// Only `eval_label` (test-time scoring) bypasses the counter.
#[derive(Debug)]
pub struct Hypergraph {
    num_nodes: usize,
    num_edges: usize,
    node_edges: Incidence,
    edge_nodes: Incidence,
    features: Mat,
    labels: Vec<usize>,
    num_classes: usize,
    train_mask: Vec<bool>,
    val_mask: Vec<bool>,
    test_mask: Vec<bool>,
    self_loop_nodes: Vec<u32>,
    test_label_reads: AtomicU64,
}

impl Clone for Hypergraph {
    fn clone(&self) -> Self {
        Hypergraph {
            num_nodes: self.num_nodes,
            num_edges: self.num_edges,
            node_edges: self.node_edges.clone(),
            edge_nodes: self.edge_nodes.clone(),
            features: self.features.clone(),
            labels: self.labels.clone(),
            num_classes: self.num_classes,
            train_mask: self.train_mask.clone(),
            val_mask: self.val_mask.clone(),
            test_mask: self.test_mask.clone(),
            self_loop_nodes: self.self_loop_nodes.clone(),
            test_label_reads: AtomicU64::new(0),
        }
    }
}

impl Hypergraph {
    /// Validates and builds a hypergraph. Isolated nodes get a singleton
    /// self-hyperedge so `Dv^{-1/2}` stays defined.
    pub fn new(
        edges: Vec<Vec<u32>>,
        features: Mat,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let n = features.rows();
        if labels.len() != n {
            return Err(Error::InconsistentDimensions {
                context: "labels vs features rows".into(),
                expected: n,
                got: labels.len(),
            });
        }
        for (i, &l) in labels.iter().enumerate() {
            if l >= num_classes {
                return Err(Error::LabelOutOfRange {
                    node: i,
                    label: l as i64,
                    num_classes,
                });
            }
        }
        let mut edge_lists: Vec<Vec<u32>> = Vec::with_capacity(edges.len());
        for (e, members) in edges.into_iter().enumerate() {
            if members.is_empty() {
                return Err(Error::EmptyHyperedge { index: e });
            }
            let mut m = members;
            m.sort_unstable();
            m.dedup();
            for &v in &m {
                if v as usize >= n {
                    return Err(Error::ParseFailure {
                        context: format!("edge {e}"),
                        message: format!("node id {v} out of range [0,{n})"),
                    });
                }
            }
            edge_lists.push(m);
        }

        let mut covered = vec![false; n];
        for e in &edge_lists {
            for &v in e {
                covered[v as usize] = true;
            }
        }
        let mut self_loop_nodes = Vec::new();
        for (v, &c) in covered.iter().enumerate() {
            if !c {
                self_loop_nodes.push(v as u32);
                edge_lists.push(vec![v as u32]);
            }
        }

        let num_edges = edge_lists.len();
        let edge_nodes = Incidence::from_lists(&edge_lists);
        let node_edges = edge_nodes.transposed(n);

        Ok(Hypergraph {
            num_nodes: n,
            num_edges,
            node_edges,
            edge_nodes,
            features,
            labels,
            num_classes,
            train_mask: vec![false; n],
            val_mask: vec![false; n],
            test_mask: vec![false; n],
            self_loop_nodes,
            test_label_reads: AtomicU64::new(0),
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.num_edges
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Mat {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn node_edges(&self) -> &Incidence {
        &self.node_edges
    }

    pub fn edge_nodes(&self) -> &Incidence {
        &self.edge_nodes
    }

    /// Total incidence count, i.e. the sum of hyperedge sizes.
    pub fn total_membership(&self) -> usize {
        self.edge_nodes.nnz()
    }

    pub fn self_loop_nodes(&self) -> &[u32] {
        &self.self_loop_nodes
    }

    /// Audited label accessor: counts every read of a test node's label.
    pub fn label(&self, node: usize) -> usize {
        if self.test_mask[node] {
            self.test_label_reads.fetch_add(1, Ordering::Relaxed);
        }
        self.labels[node]
    }

    /// Ground-truth label for test-time scoring; exempt from the audit.
    pub fn eval_label(&self, node: usize) -> usize {
        self.labels[node]
    }

    pub fn test_label_reads(&self) -> u64 {
        self.test_label_reads.load(Ordering::Relaxed)
    }

    pub fn reset_label_audit(&self) {
        self.test_label_reads.store(0, Ordering::Relaxed);
    }

    pub fn train_mask(&self) -> &[bool] {
        &self.train_mask
    }

    pub fn val_mask(&self) -> &[bool] {
        &self.val_mask
    }

    pub fn test_mask(&self) -> &[bool] {
        &self.test_mask
    }

    pub fn train_indices(&self) -> Vec<usize> {
        mask_indices(&self.train_mask)
    }

    pub fn val_indices(&self) -> Vec<usize> {
        mask_indices(&self.val_mask)
    }

    pub fn test_indices(&self) -> Vec<usize> {
        mask_indices(&self.test_mask)
    }

    /// Training nodes grouped by class (audited accessor).
    pub fn train_by_class(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.num_classes];
        for i in self.train_indices() {
            by_class[self.label(i)].push(i);
        }
        by_class
    }

    /// Installs explicit masks (programmatic datasets, induced subgraphs).
    /// Masks must be pairwise disjoint and cover at most all nodes.
    pub fn with_masks(
        mut self,
        train: Vec<bool>,
        val: Vec<bool>,
        test: Vec<bool>,
    ) -> Result<Self> {
        for (name, m) in [("train", &train), ("val", &val), ("test", &test)] {
            if m.len() != self.num_nodes {
                return Err(Error::InconsistentDimensions {
                    context: format!("{name} mask"),
                    expected: self.num_nodes,
                    got: m.len(),
                });
            }
        }
        for i in 0..self.num_nodes {
            let hits = [train[i], val[i], test[i]].iter().filter(|&&b| b).count();
            if hits > 1 {
                return Err(Error::Config(format!("node {i} appears in multiple masks")));
            }
        }
        self.train_mask = train;
        self.val_mask = val;
        self.test_mask = test;
        Ok(self)
    }

    pub fn degrees(&self) -> DegreePair {
        DegreePair::compute(self)
    }

    pub fn propagation(&self) -> Result<Propagation> {
        Propagation::new(self)
    }
}

fn mask_indices(mask: &[bool]) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter_map(|(i, &m)| m.then_some(i))
        .collect()
}

/// Node and hyperedge degree vectors.
#[derive(Debug, Clone)]
pub struct DegreePair {
    pub d_v: Vec<f64>,
    pub d_e: Vec<f64>,
}

impl DegreePair {
    pub fn compute(h: &Hypergraph) -> Self {
        let d_v = (0..h.num_nodes())
            .map(|i| h.node_edges.row_len(i) as f64)
            .collect();
        let d_e = (0..h.num_edges())
            .map(|e| h.edge_nodes.row_len(e) as f64)
            .collect();
        DegreePair { d_v, d_e }
    }
}

/// Lazy symmetric normalized propagation operator over a hypergraph.
#[derive(Debug, Clone)]
pub struct Propagation {
    edge_nodes: Incidence,
    inv_sqrt_dv: Vec<f64>,
    inv_de: Vec<f64>,
    dim: usize,
}

impl Propagation {
    fn new(h: &Hypergraph) -> Result<Self> {
        let deg = h.degrees();
        for (e, &d) in deg.d_e.iter().enumerate() {
            if d <= 0.0 {
                return Err(Error::DegenerateDegree { index: e });
            }
        }
        // After the self-loop policy every node has degree >= 1.
        let inv_sqrt_dv = deg.d_v.iter().map(|&d| 1.0 / d.sqrt()).collect();
        let inv_de = deg.d_e.iter().map(|&d| 1.0 / d).collect();
        Ok(Propagation {
            edge_nodes: h.edge_nodes.clone(),
            inv_sqrt_dv,
            inv_de,
            dim: h.num_nodes(),
        })
    }

    /// Dense P for small instances (tests and the spectral oracle). Each
    /// unordered pair is computed once so P is bitwise symmetric.
    pub fn materialize(&self) -> Mat {
        let n = self.dim;
        let mut p = Mat::zeros(n, n);
        for e in 0..self.edge_nodes.num_rows() {
            let members = self.edge_nodes.row(e);
            let w = self.inv_de[e];
            for (a, &i) in members.iter().enumerate() {
                let i = i as usize;
                for &j in &members[a..] {
                    let j = j as usize;
                    let v = p.get(i, j) + w * self.inv_sqrt_dv[i] * self.inv_sqrt_dv[j];
                    p.set(i, j, v);
                    if i != j {
                        p.set(j, i, v);
                    }
                }
            }
        }
        p
    }
}

impl SymOp for Propagation {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &Mat) -> Mat {
        assert_eq!(x.rows(), self.dim, "operand row count");
        let d = x.cols();
        let mut scaled = x.clone();
        for i in 0..self.dim {
            let s = self.inv_sqrt_dv[i];
            for v in scaled.row_mut(i) {
                *v *= s;
            }
        }
        let mut out = Mat::zeros(self.dim, d);
        let mut edge_acc = vec![0.0; d];
        for e in 0..self.edge_nodes.num_rows() {
            let members = self.edge_nodes.row(e);
            edge_acc.iter_mut().for_each(|v| *v = 0.0);
            for &j in members {
                for (a, &v) in edge_acc.iter_mut().zip(scaled.row(j as usize)) {
                    *a += v;
                }
            }
            let w = self.inv_de[e];
            for &j in members {
                for (o, &a) in out.row_mut(j as usize).iter_mut().zip(&edge_acc) {
                    *o += w * a;
                }
            }
        }
        for i in 0..self.dim {
            let s = self.inv_sqrt_dv[i];
            for v in out.row_mut(i) {
                *v *= s;
            }
        }
        out
    }
}

/// Synthetic hypergraph: dense features, dense weighted incidence whose row
/// `i` is the hyperedge induced by anchor `i`, and fixed labels.
#[derive(Debug, Clone, PartialEq)]
pub struct CondensedHypergraph {
    pub features: Mat,
    /// N' x N' nonnegative membership weights; rows index anchor hyperedges,
    /// columns index member nodes.
    pub incidence: Mat,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl CondensedHypergraph {
    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_nodes();
        if self.incidence.shape() != (n, n) {
            return Err(Error::InconsistentDimensions {
                context: "condensed incidence".into(),
                expected: n,
                got: self.incidence.rows(),
            });
        }
        if self.labels.len() != n {
            return Err(Error::InconsistentDimensions {
                context: "condensed labels".into(),
                expected: n,
                got: self.labels.len(),
            });
        }
        for i in 0..n {
            let row = self.incidence.row(i);
            if row.iter().any(|&v| v < 0.0) {
                return Err(Error::Config(format!("negative incidence weight in row {i}")));
            }
            if !row.iter().any(|&v| v > 0.0) {
                return Err(Error::EmptyHyperedge { index: i });
            }
        }
        for (i, &l) in self.labels.iter().enumerate() {
            if l >= self.num_classes {
                return Err(Error::LabelOutOfRange {
                    node: i,
                    label: l as i64,
                    num_classes: self.num_classes,
                });
            }
        }
        Ok(())
    }
}

/// Largest-remainder apportionment of `total` seats over nonnegative weights;
/// ties go to the lower index.
pub(crate) fn largest_remainder(total: usize, weights: &[f64]) -> Vec<usize> {
    let wsum: f64 = weights.iter().sum();
    if wsum <= 0.0 || weights.is_empty() {
        let mut out = vec![0; weights.len()];
        if let Some(first) = out.first_mut() {
            *first = total;
        }
        return out;
    }
    let quotas: Vec<f64> = weights.iter().map(|&w| total as f64 * w / wsum).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|&q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for k in 0..total.saturating_sub(assigned) {
        counts[order[k % order.len()]] += 1;
    }
    counts
}

/// Class-stratified
/// train/val/test split. Per-class seats come from largest-remainder
/// apportionment; a deterministic rebalance then nudges the global totals to
/// the largest-remainder targets for the whole node set.
pub fn make_splits(
    mut h: Hypergraph,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<Hypergraph> {
    let n = h.num_nodes();
    let c = h.num_classes();
    let fr = [fractions.0, fractions.1, fractions.2];

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
    for i in 0..n {
        by_class[h.labels[i]].push(i);
    }
    for (class, members) in by_class.iter().enumerate() {
        if members.len() < 3 {
            return Err(Error::CannotStratify {
                class,
                count: members.len(),
            });
        }
    }

    // Per-class shuffled pools, split into three contiguous segments.
    let mut segments: Vec<[Vec<usize>; 3]> = Vec::with_capacity(c);
    for (class, members) in by_class.iter().enumerate() {
        let mut pool = members.clone();
        let mut r = rng::stream(seed, "split", class as u64);
        for i in (1..pool.len()).rev() {
            let j = rand::Rng::gen_range(&mut r, 0..=i);
            pool.swap(i, j);
        }
        let counts = largest_remainder(pool.len(), &fr);
        debug_assert!(counts[0] >= 1, "train floor(n_c/2) >= 1 for n_c >= 3");
        let val_start = counts[0];
        let test_start = counts[0] + counts[1];
        segments.push([
            pool[..val_start].to_vec(),
            pool[val_start..test_start].to_vec(),
            pool[test_start..].to_vec(),
        ]);
    }

    // Rebalance to the global targets without ever leaving a class with no
    // training node.
    let targets = largest_remainder(n, &fr);
    for _ in 0..2 * n {
        let totals: Vec<usize> = (0..3)
            .map(|s| segments.iter().map(|seg| seg[s].len()).sum())
            .collect();
        let over = (0..3).find(|&s| totals[s] > targets[s]);
        let under = (0..3).find(|&s| totals[s] < targets[s]);
        let (Some(o), Some(u)) = (over, under) else {
            break;
        };
        let min_keep = if o == 0 { 2 } else { 1 };
        let donor = (0..c)
            .filter(|&cls| segments[cls][o].len() >= min_keep)
            .max_by_key(|&cls| (segments[cls][o].len(), std::cmp::Reverse(cls)));
        let Some(cls) = donor else {
            break; // per-class train minimum trumps exact global totals
        };
        let node = segments[cls][o].pop().unwrap();
        segments[cls][u].push(node);
    }

    let mut masks = [vec![false; n], vec![false; n], vec![false; n]];
    for seg in &segments {
        for (s, mask) in masks.iter_mut().enumerate() {
            for &node in &seg[s] {
                mask[node] = true;
            }
        }
    }
    let [train, val, test] = masks;
    h.train_mask = train;
    h.val_mask = val;
    h.test_mask = test;
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    pub(crate) fn tiny_path() -> Hypergraph {
        // edges {v1,v2}, {v2,v3}
        Hypergraph::new(
            vec![vec![0, 1], vec![1, 2]],
            Mat::identity(3),
            vec![0, 1, 0],
            2,
        )
        .unwrap()
    }

    #[test]
    fn three_node_degrees_match_hand_count() {
        let h = tiny_path();
        assert_eq!(h.num_nodes(), 3);
        assert_eq!(h.num_edges(), 2);
        let deg = h.degrees();
        assert_eq!(deg.d_v, vec![1.0, 2.0, 1.0]);
        assert_eq!(deg.d_e, vec![2.0, 2.0]);
    }

    #[test]
    fn empty_hyperedge_rejected() {
        let err = Hypergraph::new(vec![vec![0], vec![]], Mat::identity(2), vec![0, 1], 2);
        assert!(matches!(err, Err(Error::EmptyHyperedge { index: 1 })));
    }

    #[test]
    fn isolated_node_gets_self_loop() {
        let h = Hypergraph::new(
            vec![vec![0, 1]],
            Mat::identity(3),
            vec![0, 0, 1],
            2,
        )
        .unwrap();
        assert_eq!(h.self_loop_nodes(), &[2]);
        assert_eq!(h.num_edges(), 2);
        assert_eq!(h.degrees().d_v, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn identity_incidence_gives_identity_propagation() {
        let h = Hypergraph::new(
            vec![vec![0], vec![1], vec![2]],
            Mat::identity(3),
            vec![0, 1, 0],
            2,
        )
        .unwrap();
        let p = h.propagation().unwrap().materialize();
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(p.get(i, j), if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn path_propagation_matches_dense_formula() {
        // Dense evaluation of Dv^{-1/2} H De^{-1} H^T Dv^{-1/2} by hand:
        // entries 1/2 on the diagonal, 1/(2*sqrt(2)) on the path links.
        let h = tiny_path();
        let p = h.propagation().unwrap().materialize();
        let s = 1.0 / (2.0 * 2.0_f64.sqrt());
        let expect = [[0.5, s, 0.0], [s, 0.5, s], [0.0, s, 0.5]];
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(p.get(i, j), expect[i][j], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn lazy_apply_matches_materialized() {
        let h = tiny_path();
        let prop = h.propagation().unwrap();
        let x = Mat::from_vec(3, 2, vec![1.0, -1.0, 2.0, 0.5, -3.0, 4.0]);
        let lazy = prop.apply(&x);
        let dense = prop.materialize().matmul(&x).unwrap();
        for (a, b) in lazy.as_slice().iter().zip(dense.as_slice()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn propagation_is_symmetric_and_fixes_sqrt_degree() {
        let h = tiny_path();
        let prop = h.propagation().unwrap();
        let p = prop.materialize();
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(p.get(i, j), p.get(j, i), epsilon = 0.0);
            }
        }
        // P has eigenvalue 1 with eigenvector sqrt(d): the surviving form of
        // the "row sums" statement for the symmetric normalization.
        let deg = h.degrees();
        let sqrt_d = Mat::from_vec(3, 1, deg.d_v.iter().map(|d| d.sqrt()).collect());
        let applied = prop.apply(&sqrt_d);
        for i in 0..3 {
            assert_abs_diff_eq!(applied.get(i, 0), sqrt_d.get(i, 0), epsilon = 1e-12);
        }
    }

    fn balanced_graph(n: usize, c: usize) -> Hypergraph {
        let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
        let edges = (0..n / 2).map(|i| vec![i as u32, (i + n / 2) as u32]).collect();
        Hypergraph::new(edges, Mat::zeros(n, 2), labels, c).unwrap()
    }

    #[test]
    fn split_sizes_exact_on_100() {
        let h = make_splits(balanced_graph(100, 4), (0.5, 0.25, 0.25), 7).unwrap();
        assert_eq!(h.train_indices().len(), 50);
        assert_eq!(h.val_indices().len(), 25);
        assert_eq!(h.test_indices().len(), 25);
        for i in 0..100 {
            let count = [h.train_mask()[i], h.val_mask()[i], h.test_mask()[i]]
                .iter()
                .filter(|&&b| b)
                .count();
            assert_eq!(count, 1);
        }
    }

    #[test]
    fn splits_deterministic_per_seed() {
        let a = make_splits(balanced_graph(60, 3), (0.5, 0.25, 0.25), 11).unwrap();
        let b = make_splits(balanced_graph(60, 3), (0.5, 0.25, 0.25), 11).unwrap();
        let c = make_splits(balanced_graph(60, 3), (0.5, 0.25, 0.25), 12).unwrap();
        assert_eq!(a.train_mask(), b.train_mask());
        assert_eq!(a.val_mask(), b.val_mask());
        assert_ne!(a.train_mask(), c.train_mask());
    }

    #[test]
    fn every_class_keeps_a_training_node_on_12_by_4() {
        let h = make_splits(balanced_graph(12, 4), (0.5, 0.25, 0.25), 5).unwrap();
        let by_class = h.train_by_class();
        for class in by_class {
            assert!(!class.is_empty());
        }
    }

    #[test]
    fn too_small_class_cannot_stratify() {
        let h = Hypergraph::new(
            vec![vec![0, 1, 2, 3]],
            Mat::zeros(4, 1),
            vec![0, 0, 0, 1],
            2,
        )
        .unwrap();
        assert!(matches!(
            make_splits(h, (0.5, 0.25, 0.25), 0),
            Err(Error::CannotStratify { class: 1, count: 1 })
        ));
    }

    #[test]
    fn largest_remainder_hand_case() {
        assert_eq!(largest_remainder(5, &[0.5, 0.3, 0.2]), vec![3, 1, 1]);
        assert_eq!(largest_remainder(100, &[0.5, 0.25, 0.25]), vec![50, 25, 25]);
    }

    #[test]
    fn label_audit_counts_only_test_reads() {
        let h = make_splits(balanced_graph(12, 3), (0.5, 0.25, 0.25), 1).unwrap();
        for i in h.train_indices() {
            h.label(i);
        }
        assert_eq!(h.test_label_reads(), 0);
        let t = h.test_indices()[0];
        h.label(t);
        assert_eq!(h.test_label_reads(), 1);
        h.eval_label(t);
        assert_eq!(h.test_label_reads(), 1);
        h.reset_label_audit();
        assert_eq!(h.test_label_reads(), 0);
    }
}
