//! Diagnostic: track downstream accuracy, cross-class hyperedge mass and
//! feature drift across a condensation run.

use hypercondense_core::condense::Condenser;
use hypercondense_core::config::{HgnnParams, RunConfig};
use hypercondense_core::eval::{train_on_condensed, EvalContext};
use hypercondense_core::hypergraph::CondensedHypergraph;
use hypercondense_core::hypergraph::make_splits;
use hypercondense_core::mat::Mat;
use hypercondense_core::rng::derive_seed;
use hypercondense_core::standin::{generate_standin, StandinParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let arg = |name: &str, default: f64| -> f64 {
        args.iter()
            .position(|a| a == name)
            .and_then(|i| args.get(i + 1))
            .and_then(|v| v.parse().ok())
            .unwrap_or(default)
    };
    let params = StandinParams::cora_scale(7);
    let h = generate_standin(&params)?;
    let split_seed = match arg("--splitseed", -1.0) {
        v if v < 0.0 => derive_seed(7, "split", 0),
        v => v as u64,
    };
    let h = make_splits(h, (0.5, 0.25, 0.25), split_seed)?;
    let ctx = EvalContext::new(&h)?;
    let hgnn = HgnnParams::default();

    let cfg = RunConfig {
        ratio: 0.01,
        epochs: arg("--epochs", 100.0) as usize,
        lambda: arg("--lambda", 2.0),
        eta_features: arg("--eta1", 0.001),
        eta_structure: arg("--eta2", 0.001),
        n_neg: arg("--nneg", 10.0) as usize,
        samples_per_node: arg("--s", 20.0) as usize,
        seed: derive_seed(7, "set", arg("--set", 0.0) as u64),
        ..RunConfig::default()
    };
    let eval_sweep = arg("--evalsweep", 0.0) as usize;
    let total = cfg.epochs;
    let mut cond = Condenser::new(&h, cfg)?;
    let x_init = cond.x_prime().clone();
    let labels = cond.labels().to_vec();
    let every = arg("--every", 10.0) as usize;
    for epoch in 0..total {
        let rec = cond.step()?;
        if (epoch + 1) % every == 0 || epoch + 1 == total {
            let hprime = cond.regenerate_structure()?;
            let snapshot = CondensedHypergraph {
                features: cond.x_prime().clone(),
                incidence: hprime.clone(),
                labels: labels.clone(),
                num_classes: 7,
            };
            let model = train_on_condensed(&ctx, &snapshot, &hgnn, 99)?;
            let acc = ctx.test_accuracy(&model)?;
            let (mut total_mass, mut cross_mass, mut nnz, mut offdiag_nnz) = (0.0, 0.0, 0, 0);
            for e in 0..hprime.rows() {
                for j in 0..hprime.cols() {
                    let v = hprime.get(e, j);
                    if v > 0.0 {
                        nnz += 1;
                        total_mass += v;
                        if e != j {
                            offdiag_nnz += 1;
                        }
                        if labels[e] != labels[j] {
                            cross_mass += v;
                        }
                    }
                }
            }
            let drift = drift_cos(&x_init, cond.x_prime());
            println!(
                "epoch {:3} [{}] acc {:.3} | nnz {:3} (off {:3}) cross-mass {:.1}% | X' drift cos {:.4} | L {:.2}/{:.2}",
                epoch + 1,
                match rec.updated {
                    hypercondense_core::condense::UpdatedGroup::Features => "F",
                    hypercondense_core::condense::UpdatedGroup::Structure => "S",
                },
                acc,
                nnz,
                offdiag_nnz,
                100.0 * cross_mass / total_mass.max(1e-12),
                drift,
                rec.coarse,
                rec.fine,
            );
        }
    }
    if eval_sweep > 0 {
        let final_artifact = CondensedHypergraph {
            features: cond.x_prime().clone(),
            incidence: cond.regenerate_structure()?,
            labels: labels.clone(),
            num_classes: 7,
        };
        println!("eval sweep over {eval_sweep} seeds:");
        for s in 0..eval_sweep as u64 {
            for seed in [s, derive_seed(7, "eval", s)] {
                let model = train_on_condensed(&ctx, &final_artifact, &hgnn, seed)?;
                let acc = ctx.test_accuracy(&model)?;
                print!(" {acc:.3}");
            }
        }
        println!();
    }
    Ok(())
}

fn drift_cos(a: &Mat, b: &Mat) -> f64 {
    let mut worst = 1.0_f64;
    for i in 0..a.rows() {
        let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
        for (x, y) in a.row(i).iter().zip(b.row(i)) {
            dot += x * y;
            na += x * x;
            nb += y * y;
        }
        worst = worst.min(dot / (na.sqrt() * nb.sqrt()).max(1e-12));
    }
    worst
}
