//! Minimal two-layer HGNN used as the evaluation model.
//!
//! Forward pass: `softmax(P * relu(P * X * W1) * W2)` with the propagation
//! operator of whichever structure the model is trained on (original P for
//! full-data runs, the dense condensed P' otherwise). Training is Adam with
//! cross-entropy, inverted dropout after the first activation, and early
//! stopping on original-graph validation accuracy.

use std::rc::Rc;

use rand::Rng;

use crate::adam::Adam;
use crate::config::HgnnParams;
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::rng;
use crate::sparse::SymOp;
use crate::tape::Tape;

#[derive(Debug, Clone, PartialEq)]
pub struct HgnnModel {
    pub w1: Mat,
    pub w2: Mat,
}

/// A training problem: propagation operator, features, labels for the
/// cross-entropy rows (all rows when `train_rows` is `None`, as with
/// condensed or coreset data where every node is a training example).
pub struct TrainTask<'a> {
    pub op: Rc<dyn SymOp>,
    pub x: &'a Mat,
    pub labels: &'a [usize],
    pub train_rows: Option<&'a [usize]>,
    pub num_classes: usize,
}

/// Early-stopping context on the original graph.
pub struct Validation {
    pub op: Rc<dyn SymOp>,
    /// Precomputed `P * X` for the validation graph.
    pub px: Mat,
    pub idx: Vec<usize>,
    pub labels: Vec<usize>,
}

/// Logits for the two-stage forward pass given a precomputed `P * X`.
pub fn forward_logits(op: &dyn SymOp, px: &Mat, model: &HgnnModel) -> Result<Mat> {
    let z = px.matmul(&model.w1)?.map(|v| v.max(0.0));
    op.apply(&z).matmul(&model.w2)
}

/// Argmax accuracy over `idx`; ties resolve to the lower class index.
pub fn accuracy(logits: &Mat, idx: &[usize], labels: &[usize]) -> f64 {
    if idx.is_empty() {
        return 0.0;
    }
    let mut hits = 0usize;
    for (k, &i) in idx.iter().enumerate() {
        if argmax(logits.row(i)) == labels[k] {
            hits += 1;
        }
    }
    hits as f64 / idx.len() as f64
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

pub fn train_hgnn(
    task: &TrainTask,
    val: Option<&Validation>,
    params: &HgnnParams,
    seed: u64,
) -> Result<HgnnModel> {
    let d = task.x.cols();
    let (hidden, classes) = (params.hidden, task.num_classes);
    let mut init_rng = rng::stream(seed, "hgnn-init", 0);
    let mut kaiming = |rows: usize, cols: usize| {
        let bound = (6.0 / rows as f64).sqrt();
        Mat::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| init_rng.gen_range(-bound..bound)).collect(),
        )
    };
    let mut model = HgnnModel {
        w1: kaiming(d, hidden),
        w2: kaiming(hidden, classes),
    };

    let px = task.op.apply(task.x);
    let ce_rows: Vec<usize> = match task.train_rows {
        Some(rows) => rows.to_vec(),
        None => (0..task.x.rows()).collect(),
    };
    let mut onehot = Mat::zeros(ce_rows.len(), classes);
    for (r, &i) in ce_rows.iter().enumerate() {
        onehot.set(r, task.labels[i], 1.0);
    }
    let inv_n = 1.0 / ce_rows.len() as f64;

    let mut opt = Adam::new(params.lr).with_weight_decay(params.weight_decay);
    let mut best: Option<(f64, HgnnModel)> = None;
    let mut stale = 0usize;

    for epoch in 0..params.max_epochs {
        let mask = dropout_mask(px.rows(), hidden, params.dropout, seed, epoch);
        let mut tape = Tape::new();
        let pxc = tape.constant(px.clone());
        let w1 = tape.leaf(model.w1.clone());
        let w2 = tape.leaf(model.w2.clone());
        let z = tape.matmul(pxc, w1)?;
        let h1 = tape.relu(z);
        let h1 = match &mask {
            Some(m) => tape.dropout(h1, Rc::clone(m))?,
            None => h1,
        };
        let h2 = tape.sym_apply(Rc::clone(&task.op), h1)?;
        let logits = tape.matmul(h2, w2)?;
        let picked_logits = tape.gather_rows(logits, &ce_rows);
        let lse = tape.logsumexp_rows(picked_logits);
        let oh = tape.constant(onehot.clone());
        let target = tape.mul(picked_logits, oh)?;
        let target = tape.row_sums(target);
        let per_row = tape.sub(lse, target)?;
        let total = tape.reduce_sum(per_row);
        let loss = tape.scalar_mul(total, inv_n);

        let loss_value = tape.value(loss).scalar_value();
        if !loss_value.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                last_finite: None,
            });
        }
        tape.backward(loss)?;
        let g1 = tape.grad(w1).expect("w1 grad");
        let g2 = tape.grad(w2).expect("w2 grad");
        opt.step(&mut [&mut model.w1, &mut model.w2], &[g1, g2]);

        if let Some(v) = val {
            if (epoch + 1) % params.val_every == 0 {
                let logits = forward_logits(v.op.as_ref(), &v.px, &model)?;
                let acc = accuracy(&logits, &v.idx, &v.labels);
                if best.as_ref().map_or(true, |(b, _)| acc > *b) {
                    best = Some((acc, model.clone()));
                    stale = 0;
                } else {
                    stale += params.val_every;
                    if stale >= params.patience {
                        break;
                    }
                }
            }
        }
    }

    Ok(match best {
        Some((_, snapshot)) => snapshot,
        None => model,
    })
}

fn dropout_mask(
    rows: usize,
    cols: usize,
    rate: f64,
    seed: u64,
    epoch: usize,
) -> Option<Rc<Mat>> {
    if rate <= 0.0 {
        return None;
    }
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    let mut r = rng::stream(seed, "hgnn-dropout", epoch as u64);
    let data = (0..rows * cols)
        .map(|_| if r.gen::<f64>() < keep { scale } else { 0.0 })
        .collect();
    Some(Rc::new(Mat::from_vec(rows, cols, data)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::DenseSym;
    use approx::assert_abs_diff_eq;

    fn orthogonal_task() -> (Mat, Vec<usize>) {
        // one node per class, orthogonal features, identity structure
        (Mat::identity(4).scale(2.0), vec![0, 1, 2, 3])
    }

    #[test]
    fn separable_task_reaches_perfect_train_accuracy() {
        let (x, labels) = orthogonal_task();
        let op: Rc<dyn SymOp> = Rc::new(DenseSym(Mat::identity(4)));
        let task = TrainTask {
            op: Rc::clone(&op),
            x: &x,
            labels: &labels,
            train_rows: None,
            num_classes: 4,
        };
        let params = HgnnParams {
            dropout: 0.0,
            max_epochs: 300,
            ..HgnnParams::default()
        };
        let model = train_hgnn(&task, None, &params, 1).unwrap();
        let px = op.apply(&x);
        let logits = forward_logits(op.as_ref(), &px, &model).unwrap();
        let acc = accuracy(&logits, &[0, 1, 2, 3], &labels);
        assert_abs_diff_eq!(acc, 1.0);
    }

    #[test]
    fn same_seed_gives_identical_weights() {
        let (x, labels) = orthogonal_task();
        let op: Rc<dyn SymOp> = Rc::new(DenseSym(Mat::identity(4)));
        let params = HgnnParams {
            max_epochs: 20,
            ..HgnnParams::default()
        };
        let run = || {
            let task = TrainTask {
                op: Rc::clone(&op),
                x: &x,
                labels: &labels,
                train_rows: None,
                num_classes: 4,
            };
            train_hgnn(&task, None, &params, 9).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn accuracy_of_constant_majority_prediction() {
        // logits always favor class 0 on a balanced 4-class set
        let mut logits = Mat::zeros(8, 4);
        for i in 0..8 {
            logits.set(i, 0, 1.0);
        }
        let labels = vec![0, 1, 2, 3, 0, 1, 2, 3];
        let idx: Vec<usize> = (0..8).collect();
        assert_abs_diff_eq!(accuracy(&logits, &idx, &labels), 0.25);
    }

    #[test]
    fn perfect_logits_score_one() {
        let labels = vec![2, 0, 1];
        let mut logits = Mat::zeros(3, 3);
        for (i, &l) in labels.iter().enumerate() {
            logits.set(i, l, 5.0);
        }
        assert_abs_diff_eq!(accuracy(&logits, &[0, 1, 2], &labels), 1.0);
    }

    #[test]
    fn argmax_ties_break_low() {
        assert_eq!(argmax(&[1.0, 1.0, 0.5]), 0);
        assert_eq!(argmax(&[0.0, 2.0, 2.0]), 1);
    }
}
