//! Two-step evaluation protocol: train an HGNN from scratch on condensed,
//! coreset or full data, then report argmax accuracy on the original test
//! split. Early stopping always watches the original validation split.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::condense::condensed_propagation_dense;
use crate::config::HgnnParams;
use crate::coreset::{induced_subhypergraph, select_coreset, CoresetMethod};
use crate::diffusion::hkpr_diffuse;
use crate::error::Result;
use crate::hgnn::{accuracy, forward_logits, train_hgnn, HgnnModel, TrainTask, Validation};
use crate::hypergraph::{CondensedHypergraph, Hypergraph, Propagation};
use crate::mat::Mat;
use crate::sparse::{DenseSym, SymOp};

/// Precomputed original-graph quantities shared across evaluation runs.
pub struct EvalContext {
    pub op: Rc<Propagation>,
    /// `P * X` on the original graph.
    pub px: Mat,
    pub val_idx: Vec<usize>,
    pub val_labels: Vec<usize>,
    pub test_idx: Vec<usize>,
    test_labels: Vec<usize>,
    pub train_idx: Vec<usize>,
    pub num_classes: usize,
}

impl EvalContext {
    pub fn new(h: &Hypergraph) -> Result<Self> {
        let op = Rc::new(h.propagation()?);
        let px = op.apply(h.features());
        let val_idx = h.val_indices();
        let val_labels = val_idx.iter().map(|&i| h.label(i)).collect();
        let test_idx = h.test_indices();
        let test_labels = test_idx.iter().map(|&i| h.eval_label(i)).collect();
        Ok(EvalContext {
            op,
            px,
            val_idx,
            val_labels,
            test_idx,
            test_labels,
            train_idx: h.train_indices(),
            num_classes: h.num_classes(),
        })
    }

    fn validation(&self) -> Validation {
        Validation {
            op: Rc::clone(&self.op) as Rc<dyn SymOp>,
            px: self.px.clone(),
            idx: self.val_idx.clone(),
            labels: self.val_labels.clone(),
        }
    }

    /// Test accuracy of a trained model on the original hypergraph.
    pub fn test_accuracy(&self, model: &HgnnModel) -> Result<f64> {
        let logits = forward_logits(self.op.as_ref(), &self.px, model)?;
        Ok(accuracy(&logits, &self.test_idx, &self.test_labels))
    }
}

/// Train on condensed data: the weighted P' exactly as produced, every
/// synthetic node a training example.
pub fn train_on_condensed(
    ctx: &EvalContext,
    cond: &CondensedHypergraph,
    params: &HgnnParams,
    seed: u64,
) -> Result<HgnnModel> {
    cond.validate()?;
    let p_prime = condensed_propagation_dense(&cond.incidence);
    let op: Rc<dyn SymOp> = Rc::new(DenseSym(p_prime));
    let task = TrainTask {
        op,
        x: &cond.features,
        labels: &cond.labels,
        train_rows: None,
        num_classes: cond.num_classes,
    };
    train_hgnn(&task, Some(&ctx.validation()), params, seed)
}

/// Train on a coreset: induced sub-hypergraph with raw features.
pub fn train_on_coreset(
    ctx: &EvalContext,
    h: &Hypergraph,
    selected: &[usize],
    params: &HgnnParams,
    seed: u64,
) -> Result<HgnnModel> {
    let sub = induced_subhypergraph(h, selected)?;
    let op: Rc<dyn SymOp> = Rc::new(sub.propagation()?);
    let labels: Vec<usize> = (0..sub.num_nodes()).map(|i| sub.label(i)).collect();
    let task = TrainTask {
        op,
        x: sub.features(),
        labels: &labels,
        train_rows: None,
        num_classes: sub.num_classes(),
    };
    train_hgnn(&task, Some(&ctx.validation()), params, seed)
}

/// Reference run on the whole original dataset (cross-entropy over the train
/// mask only).
pub fn train_on_full(
    ctx: &EvalContext,
    h: &Hypergraph,
    params: &HgnnParams,
    seed: u64,
) -> Result<HgnnModel> {
    let labels: Vec<usize> = (0..h.num_nodes()).map(|i| h.label(i)).collect();
    let task = TrainTask {
        op: Rc::clone(&ctx.op) as Rc<dyn SymOp>,
        x: h.features(),
        labels: &labels,
        train_rows: Some(&ctx.train_idx),
        num_classes: h.num_classes(),
    };
    train_hgnn(&task, Some(&ctx.validation()), params, seed)
}

/// Selects a coreset with diffused-feature distances at the given lambda.
pub fn coreset_for(
    h: &Hypergraph,
    method: CoresetMethod,
    ratio: f64,
    lambda: f64,
    seed: u64,
) -> Result<Vec<usize>> {
    let k = crate::diffusion::truncation_order(lambda)?;
    let prop = h.propagation()?;
    let x_tilde = hkpr_diffuse(&prop, h.features(), lambda, k)?.values;
    select_coreset(h, &x_tilde, method, ratio, seed)
}

/// One evaluation run's outcome.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunRow {
    pub method: String,
    pub ratio: f64,
    pub set: usize,
    pub repeat: usize,
    pub seed: u64,
    pub accuracy: f64,
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64;
    (mean, var.sqrt())
}
