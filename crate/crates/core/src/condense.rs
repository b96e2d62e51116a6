//! The condensation loop: synthesize labels from the training class
//! distribution, initialize features by mean-pooling diffused training
//! features, then alternate Adam updates of the condensed features and of the
//! structure generator under the dynamically weighted dual-level
//! discrimination loss.
//!
//! Supervision (prototypes and contrastive pools) is restricted to training
//! nodes: test labels are never read here, and the audit counter proves it.

use rand::Rng;

use crate::adam::Adam;
use crate::config::{RunConfig, Schedule};
use crate::diffusion::{hkpr_diffuse, PoissonWeights};
use crate::error::{Error, Result};
use crate::hypergraph::{largest_remainder, CondensedHypergraph, Hypergraph};
use crate::mat::Mat;
use crate::rng;
use crate::tape::{Tape, Var, EPSILON_GUARD};

/// Learnable structure generator: a 3-layer scoring MLP over concatenated
/// anchor/candidate features plus one threshold per anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureGenerator {
    pub w1: Mat,
    pub b1: Mat,
    pub w2: Mat,
    pub b2: Mat,
    pub w3: Mat,
    pub b3: Mat,
    /// One learnable sparsity threshold per anchor, initialized at the
    /// sigmoid midpoint.
    pub delta: Mat,
}

impl StructureGenerator {
    pub fn init(feature_dim: usize, hidden: usize, n_prime: usize, seed: u64) -> Self {
        let mut r = rng::stream(seed, "mlp-init", 0);
        let mut kaiming = |rows: usize, cols: usize| {
            let bound = (6.0 / rows as f64).sqrt();
            let data = (0..rows * cols)
                .map(|_| r.gen_range(-bound..bound))
                .collect();
            Mat::from_vec(rows, cols, data)
        };
        let w1 = kaiming(2 * feature_dim, hidden);
        let w2 = kaiming(hidden, hidden);
        // The random output layer leaves a spread of initial scores around
        // the 0.5 threshold. That inventory matters: pruned entries sit in a
        // dead ReLU with no gradient to reopen them, so structure learning
        // works by pruning an over-initialized score field, not by growing
        // an empty one.
        let w3 = kaiming(hidden, 1);
        StructureGenerator {
            w1,
            b1: Mat::zeros(1, hidden),
            w2,
            b2: Mat::zeros(1, hidden),
            w3,
            b3: Mat::zeros(1, 1),
            delta: Mat::from_vec(n_prime, 1, vec![0.5; n_prime]),
        }
    }

    pub fn params(&self) -> [&Mat; 7] {
        [
            &self.w1, &self.b1, &self.w2, &self.b2, &self.w3, &self.b3, &self.delta,
        ]
    }

    fn params_mut(&mut self) -> [&mut Mat; 7] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            &mut self.b3,
            &mut self.delta,
        ]
    }
}

/// Tape handles for the generator parameters.
#[derive(Debug, Clone, Copy)]
pub struct GenVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub w3: Var,
    pub b3: Var,
    pub delta: Var,
}

pub fn register_generator(tape: &mut Tape, gen: &StructureGenerator, trainable: bool) -> GenVars {
    let mut reg = |m: &Mat| {
        if trainable {
            tape.leaf(m.clone())
        } else {
            tape.constant(m.clone())
        }
    };
    GenVars {
        w1: reg(&gen.w1),
        b1: reg(&gen.b1),
        w2: reg(&gen.w2),
        b2: reg(&gen.b2),
        w3: reg(&gen.w3),
        b3: reg(&gen.b3),
        delta: reg(&gen.delta),
    }
}

/// Synthetic label allocation: largest-remainder apportionment of the
/// training class proportions with a minimum of one node per class. Labels
/// come out sorted by class.
pub fn synthesize_labels(h: &Hypergraph, ratio: f64) -> Result<Vec<usize>> {
    let n_prime = (ratio * h.num_nodes() as f64).round() as usize;
    let c = h.num_classes();
    if n_prime < c {
        return Err(Error::TooFewSyntheticNodes {
            n_prime,
            num_classes: c,
        });
    }
    let hist: Vec<f64> = h.train_by_class().iter().map(|v| v.len() as f64).collect();
    let mut counts = largest_remainder(n_prime, &hist);
    loop {
        let Some(zero) = counts.iter().position(|&x| x == 0) else {
            break;
        };
        let donor = counts
            .iter()
            .enumerate()
            .filter(|(_, &x)| x >= 2)
            .max_by_key(|&(i, &x)| (x, std::cmp::Reverse(i)))
            .map(|(i, _)| i)
            .expect("n_prime >= c guarantees a donor class");
        counts[donor] -= 1;
        counts[zero] += 1;
    }
    let mut labels = Vec::with_capacity(n_prime);
    for (class, &count) in counts.iter().enumerate() {
        labels.extend(std::iter::repeat(class).take(count));
    }
    Ok(labels)
}

/// Mean-pooled initialization: each synthetic node averages `s` diffused
/// training features from its class, sampled without replacement when the
/// class is large enough.
pub fn init_features(
    h: &Hypergraph,
    x_tilde: &Mat,
    y_prime: &[usize],
    s: usize,
    seed: u64,
) -> Result<Mat> {
    let by_class = h.train_by_class();
    for (c, pool) in by_class.iter().enumerate() {
        if pool.is_empty() {
            return Err(Error::Config(format!("class {c} has no training nodes")));
        }
    }
    let d = x_tilde.cols();
    let mut out = Mat::zeros(y_prime.len(), d);
    for (i, &class) in y_prime.iter().enumerate() {
        let pool = &by_class[class];
        let mut r = rng::stream(seed, "init-features", i as u64);
        let picks = if pool.len() >= s {
            rng::sample_without_replacement(&mut r, pool.len(), s)
        } else {
            rng::sample_with_replacement(&mut r, pool.len(), s)
        };
        let row = out.row_mut(i);
        for p in &picks {
            for (acc, &v) in row.iter_mut().zip(x_tilde.row(pool[*p])) {
                *acc += v;
            }
        }
        let inv = 1.0 / picks.len() as f64;
        for v in row {
            *v *= inv;
        }
    }
    Ok(out)
}

/// Output of one structure-generation pass.
pub struct StructureOut {
    /// Sparsified weighted incidence, rows = anchor hyperedges.
    pub h: Var,
    /// Pre-threshold sigmoid scores.
    pub scores: Var,
    /// Rows whose hyperedge emptied out and fell back to the anchor's own
    /// pre-threshold score.
    pub fallback_rows: Vec<usize>,
}

/// Scores every ordered anchor/candidate pair with the MLP and applies the
/// per-anchor thresholds.
pub fn generate_structure(tape: &mut Tape, x: Var, gv: &GenVars) -> Result<StructureOut> {
    let n = tape.value(x).rows();
    let mut idx_anchor = Vec::with_capacity(n * n);
    let mut idx_candidate = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            idx_anchor.push(i);
            idx_candidate.push(j);
        }
    }
    let xa = tape.gather_rows(x, &idx_anchor);
    let xc = tape.gather_rows(x, &idx_candidate);
    let pairs = tape.hstack(xa, xc)?;

    let z1 = tape.matmul(pairs, gv.w1)?;
    let z1 = tape.add_row_vec(z1, gv.b1)?;
    let z1 = tape.relu(z1);
    let z2 = tape.matmul(z1, gv.w2)?;
    let z2 = tape.add_row_vec(z2, gv.b2)?;
    let z2 = tape.relu(z2);
    let logits = tape.matmul(z2, gv.w3)?;
    let logits = tape.add_row_vec(logits, gv.b3)?;
    let scores_flat = tape.sigmoid(logits);
    let scores = tape.reshape(scores_flat, n, n)?;

    sparsify_scores(tape, scores, gv.delta)
}

/// `H'_i = ReLU(scores_i - delta_i)` with the nonempty-hyperedge fallback:
/// a fully zeroed row keeps its anchor's own pre-threshold score on the
/// diagonal, and the gradient flows through that score.
pub fn sparsify_scores(tape: &mut Tape, scores: Var, delta: Var) -> Result<StructureOut> {
    let shifted = tape.sub_col_vec(scores, delta)?;
    let thresholded = tape.relu(shifted);
    let value = tape.value(thresholded);
    let mut fallback_rows = Vec::new();
    for i in 0..value.rows() {
        if value.row(i).iter().all(|&v| v == 0.0) {
            fallback_rows.push(i);
        }
    }
    let h = tape.row_fallback(thresholded, scores, &fallback_rows)?;
    Ok(StructureOut {
        h,
        scores,
        fallback_rows,
    })
}

/// Differentiable normalized propagation over the condensed structure:
/// node degrees are column sums of the anchor-indexed incidence, hyperedge
/// degrees are row sums, and the rsqrt/recip guards keep vanishing degrees
/// finite.
pub fn condensed_propagation(tape: &mut Tape, h: Var) -> Result<Var> {
    let d_e = tape.row_sums(h);
    let d_v = tape.col_sums(h);
    let b = tape.transpose(h); // node-by-edge view
    let inv_de = tape.recip(d_e);
    let inv_de_row = tape.transpose(inv_de);
    let w = tape.scale_cols(b, inv_de_row)?;
    let a = tape.matmul(w, h)?; // B De^{-1} B^T since B^T = H'
    let r_row = tape.rsqrt(d_v);
    let r_col = tape.transpose(r_row);
    let scaled = tape.scale_cols(a, r_row)?;
    tape.scale_rows(scaled, r_col)
}

/// Plain (non-tape) version of `condensed_propagation` for evaluation.
pub fn condensed_propagation_dense(h: &Mat) -> Mat {
    let n = h.rows();
    let mut d_e = vec![0.0; n];
    let mut d_v = vec![0.0; n];
    for i in 0..n {
        for (j, &v) in h.row(i).iter().enumerate() {
            d_e[i] += v;
            d_v[j] += v;
        }
    }
    let inv_de: Vec<f64> = d_e.iter().map(|&x| 1.0 / (x + EPSILON_GUARD)).collect();
    let r: Vec<f64> = d_v
        .iter()
        .map(|&x| 1.0 / (x + EPSILON_GUARD).sqrt())
        .collect();
    // P'[j,k] = r_j * sum_e H'[e,j] H'[e,k] / d_e[e] * r_k
    let mut p = Mat::zeros(n, n);
    for e in 0..n {
        let row = h.row(e);
        let w = inv_de[e];
        for j in 0..n {
            let hej = row[j];
            if hej == 0.0 {
                continue;
            }
            for k in 0..n {
                let v = p.get(j, k) + hej * w * row[k];
                p.set(j, k, v);
            }
        }
    }
    for j in 0..n {
        for k in 0..n {
            let v = p.get(j, k) * r[j] * r[k];
            p.set(j, k, v);
        }
    }
    p
}

/// Truncated diffusion expressed on the tape: K dense applications of `p`.
pub fn diffuse_on_tape(
    tape: &mut Tape,
    p: Var,
    x: Var,
    weights: &PoissonWeights,
) -> Result<Var> {
    let mut acc = tape.scalar_mul(x, weights.weights[0]);
    let mut power = x;
    for &wk in &weights.weights[1..] {
        power = tape.matmul(p, power)?;
        let term = tape.scalar_mul(power, wk);
        acc = tape.add(acc, term)?;
    }
    Ok(acc)
}

/// Coarse-grained discrimination: cosine alignment of matched class
/// prototypes plus the full off-diagonal cross-similarity penalty.
/// `c_orig` are the original-side prototypes (training nodes only),
/// `y_prime_t` is the one-hot transpose of the synthetic labels.
pub fn coarse_loss(
    tape: &mut Tape,
    c_orig: &Mat,
    x_tilde_prime: Var,
    y_prime_t: &Mat,
) -> Result<Var> {
    let classes = c_orig.rows();
    let yt = tape.constant(y_prime_t.clone());
    let c_synth = tape.matmul(yt, x_tilde_prime)?;
    for i in 0..classes {
        let norm: f64 = tape.value(c_synth).row(i).iter().map(|&x| x * x).sum();
        if norm == 0.0 {
            return Err(Error::DegeneratePrototype { class: i });
        }
    }
    let c_orig_var = tape.constant(c_orig.clone());
    let cos = tape.cosine_similarity(c_orig_var, c_synth)?;
    let eye = tape.constant(Mat::identity(classes));
    let diag = tape.mul(cos, eye)?;
    let trace = tape.reduce_sum(diag);
    let total = tape.reduce_sum(cos);
    // sum_i (1 - cos_ii) + sum_{i != j} cos_ij = C - 2 tr + sum
    let neg2tr = tape.scalar_mul(trace, -2.0);
    let partial = tape.add(neg2tr, total)?;
    let c_const = tape.constant(Mat::scalar(classes as f64));
    tape.add(partial, c_const)
}

/// Fine-grained discrimination: for each synthetic node, an InfoNCE-style
/// term over one positive and `n_neg` negatives with raw inner-product
/// similarities, summed over nodes. `positives` has one diffused original
/// feature row per synthetic node; `negatives[k]` likewise.
pub fn fine_loss(
    tape: &mut Tape,
    x_tilde_prime: Var,
    positives: Mat,
    negatives: &[Mat],
) -> Result<Var> {
    let pos = tape.constant(positives);
    let prod = tape.mul(x_tilde_prime, pos)?;
    let s_pos = tape.row_sums(prod);
    let mut stacked = s_pos;
    for neg in negatives {
        let nc = tape.constant(neg.clone());
        let prod = tape.mul(x_tilde_prime, nc)?;
        let s_neg = tape.row_sums(prod);
        stacked = tape.hstack(stacked, s_neg)?;
    }
    let lse = tape.logsumexp_rows(stacked);
    let per_node = tape.sub(lse, s_pos)?;
    Ok(tape.reduce_sum(per_node))
}

/// Which parameter group an epoch updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdatedGroup {
    Features,
    Structure,
}

#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total: f64,
    pub coarse: f64,
    pub fine: f64,
    pub w_coarse: f64,
    pub w_fine: f64,
    pub updated: UpdatedGroup,
}

#[derive(Debug)]
pub struct CondenseOutput {
    pub condensed: CondensedHypergraph,
    pub trajectory: Vec<EpochRecord>,
    pub config: RunConfig,
}

/// Driver for the alternating optimization. `step` runs one epoch so tests
/// can snapshot parameters; `run` loops to completion and regenerates the
/// final structure.
pub struct Condenser {
    cfg: RunConfig,
    weights: PoissonWeights,
    x_tilde: Mat,
    c_orig: Mat,
    y_prime: Vec<usize>,
    y_prime_t: Mat,
    train_by_class: Vec<Vec<usize>>,
    others_by_class: Vec<Vec<usize>>,
    num_classes: usize,
    x_prime: Mat,
    gen: StructureGenerator,
    adam_features: Adam,
    adam_structure: Adam,
    epoch: usize,
    trajectory: Vec<EpochRecord>,
    last_finite: Option<f64>,
    warned_small_pool: bool,
}

impl Condenser {
    pub fn new(h: &Hypergraph, cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let k = cfg.truncation_k()?;
        let weights = PoissonWeights::new(cfg.lambda, k)?;
        let prop = h.propagation()?;
        let x_tilde = hkpr_diffuse(&prop, h.features(), cfg.lambda, k)?.values;

        let y_prime = synthesize_labels(h, cfg.ratio)?;
        let train_by_class = h.train_by_class();
        for (c, pool) in train_by_class.iter().enumerate() {
            if pool.is_empty() {
                return Err(Error::Config(format!("class {c} has no training nodes")));
            }
        }

        let classes = h.num_classes();
        let d = h.feature_dim();
        let mut c_orig = Mat::zeros(classes, d);
        for (c, pool) in train_by_class.iter().enumerate() {
            for &i in pool {
                for (acc, &v) in c_orig.row_mut(c).iter_mut().zip(x_tilde.row(i)) {
                    *acc += v;
                }
            }
        }
        for c in 0..classes {
            if c_orig.row(c).iter().all(|&v| v == 0.0) {
                return Err(Error::DegeneratePrototype { class: c });
            }
        }

        let n_train: usize = train_by_class.iter().map(Vec::len).sum();
        let mut others_by_class = vec![Vec::with_capacity(n_train); classes];
        for (c, pool) in train_by_class.iter().enumerate() {
            for (other, slot) in others_by_class.iter_mut().enumerate() {
                if other != c {
                    slot.extend_from_slice(pool);
                }
            }
        }

        let x_prime = init_features(h, &x_tilde, &y_prime, cfg.samples_per_node, cfg.seed)?;
        let n_prime = y_prime.len();
        let mut y_prime_t = Mat::zeros(classes, n_prime);
        for (i, &c) in y_prime.iter().enumerate() {
            y_prime_t.set(c, i, 1.0);
        }

        let gen = StructureGenerator::init(d, cfg.mlp_hidden, n_prime, cfg.seed);
        let adam_features = Adam::new(cfg.eta_features);
        let adam_structure = Adam::new(cfg.eta_structure);

        Ok(Condenser {
            weights,
            x_tilde,
            c_orig,
            y_prime,
            y_prime_t,
            train_by_class,
            others_by_class,
            num_classes: classes,
            x_prime,
            gen,
            adam_features,
            adam_structure,
            epoch: 0,
            trajectory: Vec::new(),
            last_finite: None,
            warned_small_pool: false,
            cfg,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn x_prime(&self) -> &Mat {
        &self.x_prime
    }

    pub fn generator(&self) -> &StructureGenerator {
        &self.gen
    }

    pub fn labels(&self) -> &[usize] {
        &self.y_prime
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn trajectory(&self) -> &[EpochRecord] {
        &self.trajectory
    }

    /// Fresh positive/negative draws for an epoch, from a counter-indexed
    /// stream so parallel jobs stay reproducible.
    fn sample_fine(&mut self, epoch: usize) -> (Mat, Vec<Mat>) {
        let d = self.x_tilde.cols();
        let n_prime = self.y_prime.len();
        let n_neg = self.cfg.n_neg;
        let mut r = rng::stream(self.cfg.seed, "fine-sampling", epoch as u64);
        let mut pos = Mat::zeros(n_prime, d);
        let mut negs = vec![Mat::zeros(n_prime, d); n_neg];
        for (i, &class) in self.y_prime.iter().enumerate() {
            let p_pool = &self.train_by_class[class];
            let pick = p_pool[r.gen_range(0..p_pool.len())];
            pos.row_mut(i).copy_from_slice(self.x_tilde.row(pick));

            let n_pool = &self.others_by_class[class];
            let picks = if n_pool.len() >= n_neg {
                rng::sample_without_replacement(&mut r, n_pool.len(), n_neg)
            } else {
                if !self.warned_small_pool {
                    log::warn!(
                        "negative pool for class {class} has {} nodes < n_neg={n_neg}; sampling with replacement",
                        n_pool.len()
                    );
                    self.warned_small_pool = true;
                }
                rng::sample_with_replacement(&mut r, n_pool.len(), n_neg)
            };
            for (k, &q) in picks.iter().enumerate() {
                negs[k].row_mut(i).copy_from_slice(self.x_tilde.row(n_pool[q]));
            }
        }
        (pos, negs)
    }

    /// One epoch: rebuild the tape, evaluate the weighted objective, and
    /// update the scheduled parameter group.
    pub fn step(&mut self) -> Result<EpochRecord> {
        let epoch = self.epoch;
        let schedule = Schedule::new(epoch, self.cfg.epochs);
        let (w_c, w_f) = schedule.cosine_weights();

        let mut tape = Tape::new();
        let x = tape.leaf(self.x_prime.clone());
        let gv = register_generator(&mut tape, &self.gen, true);
        let structure = generate_structure(&mut tape, x, &gv)?;
        let p_prime = condensed_propagation(&mut tape, structure.h)?;
        let xtp = diffuse_on_tape(&mut tape, p_prime, x, &self.weights)?;
        let lc = coarse_loss(&mut tape, &self.c_orig, xtp, &self.y_prime_t)?;
        let (pos, negs) = self.sample_fine(epoch);
        let lf = fine_loss(&mut tape, xtp, pos, &negs)?;
        let wc_term = tape.scalar_mul(lc, w_c);
        let wf_term = tape.scalar_mul(lf, w_f);
        let loss = tape.add(wc_term, wf_term)?;

        let total = tape.value(loss).scalar_value();
        if !total.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                last_finite: self.last_finite,
            });
        }
        self.last_finite = Some(total);
        let record = EpochRecord {
            epoch,
            total,
            coarse: tape.value(lc).scalar_value(),
            fine: tape.value(lf).scalar_value(),
            w_coarse: w_c,
            w_fine: w_f,
            updated: if epoch % (self.cfg.tau1 + self.cfg.tau2) < self.cfg.tau1 {
                UpdatedGroup::Features
            } else {
                UpdatedGroup::Structure
            },
        };

        tape.backward(loss)?;
        match record.updated {
            UpdatedGroup::Features => {
                let gx = tape.grad(x).expect("loss depends on features");
                self.adam_features.step(&mut [&mut self.x_prime], &[gx]);
            }
            UpdatedGroup::Structure => {
                let vars = [gv.w1, gv.b1, gv.w2, gv.b2, gv.w3, gv.b3, gv.delta];
                let grads: Vec<&Mat> = vars
                    .iter()
                    .map(|&v| tape.grad(v).expect("loss depends on generator"))
                    .collect();
                let mut params = self.gen.params_mut();
                self.adam_structure.step(&mut params, &grads);
            }
        }

        self.epoch += 1;
        self.trajectory.push(record.clone());
        Ok(record)
    }

    /// Forward-only regeneration of the structure from the current
    /// parameters (the final pass after the loop).
    pub fn regenerate_structure(&self) -> Result<Mat> {
        let mut tape = Tape::new();
        let x = tape.constant(self.x_prime.clone());
        let gv = register_generator(&mut tape, &self.gen, false);
        let structure = generate_structure(&mut tape, x, &gv)?;
        Ok(tape.value(structure.h).clone())
    }

    pub fn run(mut self) -> Result<CondenseOutput> {
        while self.epoch < self.cfg.epochs {
            self.step()?;
        }
        self.finish()
    }

    pub fn finish(self) -> Result<CondenseOutput> {
        let incidence = self.regenerate_structure()?;
        let condensed = CondensedHypergraph {
            features: self.x_prime,
            incidence,
            labels: self.y_prime,
            num_classes: self.num_classes,
        };
        condensed.validate()?;
        Ok(CondenseOutput {
            condensed,
            trajectory: self.trajectory,
            config: self.cfg,
        })
    }
}

/// Convenience wrapper: full run per the driver above.
pub fn condense(h: &Hypergraph, cfg: RunConfig) -> Result<CondenseOutput> {
    Condenser::new(h, cfg)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// 10 nodes, train class histogram (5, 3, 2), everything in train.
    fn hist_532() -> Hypergraph {
        let labels = vec![0, 0, 0, 0, 0, 1, 1, 1, 2, 2];
        let edges = vec![vec![0, 1, 5], vec![2, 3, 8], vec![4, 6, 9], vec![5, 6, 7]];
        let h = Hypergraph::new(edges, Mat::zeros(10, 4), labels, 3).unwrap();
        h.with_masks(vec![true; 10], vec![false; 10], vec![false; 10])
            .unwrap()
    }

    /// Small class-separated instance with all three masks populated.
    fn small_labeled(n_per_class: usize, classes: usize, dim: usize) -> Hypergraph {
        let n = n_per_class * classes;
        let labels: Vec<usize> = (0..n).map(|i| i / n_per_class).collect();
        let mut feats = Mat::zeros(n, dim);
        for i in 0..n {
            for j in 0..dim {
                // class-keyed pattern plus a small node-specific wiggle
                let v = if j % classes == labels[i] { 1.0 } else { 0.1 };
                feats.set(i, j, v + 0.01 * ((i * dim + j) as f64).sin());
            }
        }
        let mut edges = Vec::new();
        for c in 0..classes {
            let base = (c * n_per_class) as u32;
            edges.push((0..n_per_class as u32).map(|k| base + k).collect());
        }
        edges.push((0..classes as u32).map(|c| c * n_per_class as u32).collect());
        let h = Hypergraph::new(edges, feats, labels, classes).unwrap();
        // first node of each class to val, second to test, rest train
        let mut train = vec![false; n];
        let mut val = vec![false; n];
        let mut test = vec![false; n];
        for i in 0..n {
            match i % n_per_class {
                0 => val[i] = true,
                1 => test[i] = true,
                _ => train[i] = true,
            }
        }
        h.with_masks(train, val, test).unwrap()
    }

    #[test]
    fn label_synthesis_largest_remainder() {
        let h = hist_532();
        // N' = 5, proportions (0.5, 0.3, 0.2): floors (2,1,1), the spare seat
        // goes to class 0 on the remainder tie.
        assert_eq!(synthesize_labels(&h, 0.5).unwrap(), vec![0, 0, 0, 1, 2]);
    }

    #[test]
    fn label_synthesis_minimum_one_per_class() {
        let h = hist_532();
        // N' = 3 with a (5,3,2) histogram: every class keeps one node.
        assert_eq!(synthesize_labels(&h, 0.3).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn label_synthesis_rejects_tiny_ratio() {
        let h = hist_532();
        assert!(matches!(
            synthesize_labels(&h, 0.2),
            Err(Error::TooFewSyntheticNodes { n_prime: 2, num_classes: 3 })
        ));
    }

    #[test]
    fn init_features_single_sample_copies_a_row() {
        let h = hist_532();
        let x_tilde = Mat::from_vec(10, 1, (0..10).map(|i| i as f64).collect());
        let y_prime = vec![0, 1, 2];
        let x = init_features(&h, &x_tilde, &y_prime, 1, 3).unwrap();
        let pools = h.train_by_class();
        for (i, &c) in y_prime.iter().enumerate() {
            let v = x.get(i, 0);
            assert!(
                pools[c].iter().any(|&j| x_tilde.get(j, 0) == v),
                "row {i} should equal one sampled class-{c} feature"
            );
        }
    }

    #[test]
    fn init_features_constant_class_is_exact() {
        let h = hist_532();
        let mut x_tilde = Mat::zeros(10, 2);
        for i in 0..10 {
            let c = h.label(i) as f64;
            x_tilde.set(i, 0, 10.0 + c);
            x_tilde.set(i, 1, -c);
        }
        let x = init_features(&h, &x_tilde, &[1, 1], 7, 9).unwrap();
        for i in 0..2 {
            assert_abs_diff_eq!(x.get(i, 0), 11.0, epsilon = 1e-12);
            assert_abs_diff_eq!(x.get(i, 1), -1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn init_features_two_node_class_full_draw_is_mean() {
        let h = hist_532();
        let mut x_tilde = Mat::zeros(10, 1);
        x_tilde.set(8, 0, 3.0);
        x_tilde.set(9, 0, 5.0);
        // class 2 has exactly nodes {8, 9}; s = 2 draws both without
        // replacement, so the mean is forced.
        let x = init_features(&h, &x_tilde, &[2], 2, 123).unwrap();
        assert_abs_diff_eq!(x.get(0, 0), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn sparsify_matches_hand_threshold() {
        let mut tape = Tape::new();
        let scores = tape.leaf(Mat::from_vec(
            3,
            3,
            vec![0.9, 0.4, 0.7, 0.9, 0.4, 0.7, 0.9, 0.4, 0.7],
        ));
        let delta = tape.leaf(Mat::from_vec(3, 1, vec![0.5, 1.5, 0.5]));
        let out = sparsify_scores(&mut tape, scores, delta).unwrap();
        let h = tape.value(out.h);
        let row0: Vec<f64> = h.row(0).to_vec();
        assert_abs_diff_eq!(row0[0], 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(row0[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(row0[2], 0.2, epsilon = 1e-12);
        // row 1 has delta >= 1: everything prunes, fallback keeps the
        // anchor's own pre-threshold score on the diagonal.
        assert_eq!(out.fallback_rows, vec![1]);
        assert_eq!(h.row(1), &[0.0, 0.4, 0.0]);
    }

    #[test]
    fn zero_mlp_gives_diagonal_half_fallback() {
        let n = 4;
        let d = 3;
        let mut gen = StructureGenerator::init(d, 8, n, 0);
        for p in gen.params_mut() {
            *p = Mat::zeros(p.rows(), p.cols());
        }
        gen.delta = Mat::from_vec(n, 1, vec![0.5; n]);
        let mut tape = Tape::new();
        let x = tape.constant(Mat::from_vec(n, d, (0..n * d).map(|i| i as f64).collect()));
        let gv = register_generator(&mut tape, &gen, false);
        let out = generate_structure(&mut tape, x, &gv).unwrap();
        // zero logits -> all scores 0.5 -> thresholding empties every row
        assert_eq!(out.fallback_rows, (0..n).collect::<Vec<_>>());
        let h = tape.value(out.h);
        for i in 0..n {
            for j in 0..n {
                let expect = if i == j { 0.5 } else { 0.0 };
                assert_abs_diff_eq!(h.get(i, j), expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn condensed_propagation_identity() {
        let mut tape = Tape::new();
        let h = tape.leaf(Mat::identity(3));
        let p = condensed_propagation(&mut tape, h).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(tape.value(p).get(i, j), expect, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn condensed_propagation_all_ones_two_by_two() {
        let mut tape = Tape::new();
        let h = tape.leaf(Mat::from_vec(2, 2, vec![1.0; 4]));
        let p = condensed_propagation(&mut tape, h).unwrap();
        for v in tape.value(p).as_slice() {
            assert_abs_diff_eq!(v, &0.5, epsilon = 1e-9);
        }
    }

    #[test]
    fn condensed_propagation_symmetric_and_matches_dense() {
        let mut r = rng::stream(42, "test", 0);
        let h_val = Mat::from_vec(5, 5, (0..25).map(|_| r.gen_range(0.0..1.0)).collect());
        let mut tape = Tape::new();
        let h = tape.leaf(h_val.clone());
        let p = condensed_propagation(&mut tape, h).unwrap();
        let p_tape = tape.value(p);
        for i in 0..5 {
            for j in 0..5 {
                assert_abs_diff_eq!(p_tape.get(i, j), p_tape.get(j, i), epsilon = 1e-12);
            }
        }
        let p_dense = condensed_propagation_dense(&h_val);
        for (a, b) in p_tape.as_slice().iter().zip(p_dense.as_slice()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn coarse_loss_zero_for_matched_orthogonal_prototypes() {
        // y' = (0, 1), synthetic diffused features equal to the original
        // prototypes, which are orthogonal.
        let c_orig = Mat::from_vec(2, 2, vec![2.0, 0.0, 0.0, 3.0]);
        let y_prime_t = Mat::identity(2);
        let mut tape = Tape::new();
        let xtp = tape.leaf(Mat::from_vec(2, 2, vec![2.0, 0.0, 0.0, 3.0]));
        let loss = coarse_loss(&mut tape, &c_orig, xtp, &y_prime_t).unwrap();
        assert_abs_diff_eq!(tape.value(loss).scalar_value(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn coarse_loss_swapped_axes_is_four() {
        let c_orig = Mat::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let y_prime_t = Mat::identity(2);
        let mut tape = Tape::new();
        let xtp = tape.leaf(Mat::from_vec(2, 2, vec![0.0, 1.0, 1.0, 0.0]));
        let loss = coarse_loss(&mut tape, &c_orig, xtp, &y_prime_t).unwrap();
        assert_abs_diff_eq!(tape.value(loss).scalar_value(), 4.0, epsilon = 1e-9);
    }

    #[test]
    fn coarse_loss_flags_zero_prototype() {
        let c_orig = Mat::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let y_prime_t = Mat::identity(2);
        let mut tape = Tape::new();
        let xtp = tape.leaf(Mat::from_vec(2, 2, vec![1.0, 0.0, 0.0, 0.0]));
        let err = coarse_loss(&mut tape, &c_orig, xtp, &y_prime_t).unwrap_err();
        assert!(matches!(err, Error::DegeneratePrototype { class: 1 }));
    }

    #[test]
    fn fine_loss_all_equal_scores_is_log_n_plus_one() {
        let n_prime = 3;
        let d = 4;
        let mut tape = Tape::new();
        let xtp = tape.leaf(Mat::zeros(n_prime, d));
        let pos = Mat::zeros(n_prime, d);
        let negs = vec![Mat::zeros(n_prime, d); 5];
        let loss = fine_loss(&mut tape, xtp, pos, &negs).unwrap();
        assert_abs_diff_eq!(
            tape.value(loss).scalar_value(),
            n_prime as f64 * 6.0_f64.ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn fine_loss_vanishes_for_dominant_positive() {
        let mut tape = Tape::new();
        let xtp = tape.leaf(Mat::from_vec(1, 2, vec![1.0, 0.0]));
        let pos = Mat::from_vec(1, 2, vec![500.0, 0.0]);
        let negs = vec![Mat::zeros(1, 2); 3];
        let loss = fine_loss(&mut tape, xtp, pos, &negs).unwrap();
        assert!(tape.value(loss).scalar_value() < 1e-6);
    }

    #[test]
    fn fine_loss_single_equal_negative_is_ln_two() {
        let mut tape = Tape::new();
        let xtp = tape.leaf(Mat::from_vec(1, 2, vec![1.0, 1.0]));
        let pos = Mat::from_vec(1, 2, vec![0.7, 0.3]);
        let negs = vec![Mat::from_vec(1, 2, vec![0.3, 0.7])];
        let loss = fine_loss(&mut tape, xtp, pos, &negs).unwrap();
        let l = tape.value(loss).scalar_value();
        assert_abs_diff_eq!(l, 2.0_f64.ln(), epsilon = 1e-12);
        // Tightness of the ranking bound at equality: e^l - 1 = 1.
        assert_abs_diff_eq!(l.exp() - 1.0, 1.0, epsilon = 1e-12);
    }

    fn quick_cfg() -> RunConfig {
        RunConfig {
            ratio: 0.25,
            lambda: 1.0,
            samples_per_node: 2,
            epochs: 10,
            tau1: 2,
            tau2: 3,
            n_neg: 2,
            mlp_hidden: 8,
            seed: 5,
            ..RunConfig::default()
        }
    }

    #[test]
    fn alternation_updates_scheduled_groups_only() {
        let h = small_labeled(4, 3, 6);
        let mut cond = Condenser::new(&h, quick_cfg()).unwrap();
        for epoch in 0..10 {
            let x_before = cond.x_prime().clone();
            let gen_before: Vec<Mat> = cond.generator().params().iter().map(|&m| m.clone()).collect();
            let rec = cond.step().unwrap();
            let x_changed = cond.x_prime() != &x_before;
            let gen_changed = cond
                .generator()
                .params()
                .iter()
                .zip(&gen_before)
                .any(|(now, before)| *now != before);
            // tau1 = 2, tau2 = 3: epochs 0-1 features, 2-4 structure, repeat.
            let expect_features = epoch % 5 < 2;
            assert_eq!(rec.updated == UpdatedGroup::Features, expect_features);
            assert_eq!(x_changed, expect_features, "epoch {epoch}");
            assert_eq!(gen_changed, !expect_features, "epoch {epoch}");
        }
    }

    #[test]
    fn first_epoch_loss_is_pure_coarse() {
        let h = small_labeled(4, 3, 6);
        let mut cond = Condenser::new(&h, quick_cfg()).unwrap();
        let rec = cond.step().unwrap();
        assert_eq!(rec.w_coarse, 1.0);
        assert_eq!(rec.w_fine, 0.0);
        assert_eq!(rec.total, rec.coarse);
    }

    #[test]
    fn condense_is_bitwise_deterministic() {
        let h = small_labeled(4, 3, 6);
        let a = condense(&h, quick_cfg()).unwrap();
        let b = condense(&h, quick_cfg()).unwrap();
        assert_eq!(a.condensed, b.condensed);
        let ta: Vec<u64> = a.trajectory.iter().map(|r| r.total.to_bits()).collect();
        let tb: Vec<u64> = b.trajectory.iter().map(|r| r.total.to_bits()).collect();
        assert_eq!(ta, tb);
    }

    #[test]
    fn condensed_rows_never_empty_and_audit_clean() {
        let h = small_labeled(4, 3, 6);
        let out = condense(&h, quick_cfg()).unwrap();
        out.condensed.validate().unwrap();
        for i in 0..out.condensed.num_nodes() {
            assert!(out.condensed.incidence.row(i).iter().any(|&v| v > 0.0));
        }
        assert_eq!(h.test_label_reads(), 0, "condensation must not read test labels");
    }
}
