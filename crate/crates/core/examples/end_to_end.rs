//! End-to-end walkthrough on the synthetic benchmark-scale dataset:
//! condense at r=1%, train the evaluation HGNN on the condensed data, and
//! compare against the random coreset and full-data references.
//!
//! Run with `cargo run --release -p hypercondense-core --example end_to_end`.

use std::time::Instant;

use hypercondense_core::condense::condense;
use hypercondense_core::config::{HgnnParams, RunConfig};
use hypercondense_core::coreset::CoresetMethod;
use hypercondense_core::eval::{
    coreset_for, mean_std, train_on_condensed, train_on_coreset, train_on_full, EvalContext,
};
use hypercondense_core::hypergraph::make_splits;
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
    let sets = arg("--sets", 3.0) as usize;
    let repeats = arg("--repeats", 3.0) as usize;
    let epochs = arg("--epochs", 50.0) as usize;
    let mut params = StandinParams::cora_scale(7);
    params.nodes = arg("--nodes", params.nodes as f64) as usize;
    params.edges = arg("--edges", params.edges as f64) as usize;
    params.total_membership = arg("--members", params.total_membership as f64) as usize;
    params.dim = arg("--dim", params.dim as f64) as usize;
    params.homophily = arg("--homophily", params.homophily);
    params.noise = arg("--noise", params.noise);
    params.separation = arg("--sep", params.separation);

    let t0 = Instant::now();
    let h = generate_standin(&params)?;
    let split_seed = match arg("--splitseed", -1.0) {
        v if v < 0.0 => derive_seed(7, "split", 0),
        v => v as u64,
    };
    let h = make_splits(h, (0.5, 0.25, 0.25), split_seed)?;
    println!(
        "dataset: {} nodes, {} edges, {} memberships, dim {} ({:.1}s)",
        h.num_nodes(),
        h.num_edges(),
        h.total_membership(),
        h.feature_dim(),
        t0.elapsed().as_secs_f64()
    );

    let ctx = EvalContext::new(&h)?;
    let hgnn = HgnnParams::default();

    let t_full = Instant::now();
    let mut full_accs = Vec::new();
    for rep in 0..repeats {
        let model = train_on_full(&ctx, &h, &hgnn, derive_seed(7, "full", rep as u64))?;
        full_accs.push(ctx.test_accuracy(&model)?);
    }
    let (full_mean, full_std) = mean_std(&full_accs);
    println!(
        "full data      : {:.4} ± {:.4} ({:.1}s)",
        full_mean,
        full_std,
        t_full.elapsed().as_secs_f64()
    );

    let t_rand = Instant::now();
    let mut rand_accs = Vec::new();
    for set in 0..sets {
        let sel = coreset_for(&h, CoresetMethod::Random, 0.01, 2.0, derive_seed(7, "set", set as u64))?;
        for rep in 0..repeats {
            let model = train_on_coreset(&ctx, &h, &sel, &hgnn, derive_seed(7, "eval", (set * repeats + rep) as u64))?;
            rand_accs.push(ctx.test_accuracy(&model)?);
        }
    }
    let (rand_mean, rand_std) = mean_std(&rand_accs);
    println!(
        "random coreset : {:.4} ± {:.4} ({:.1}s)",
        rand_mean,
        rand_std,
        t_rand.elapsed().as_secs_f64()
    );

    let t_cond = Instant::now();
    let mut cond_accs = Vec::new();
    for set in 0..sets {
        let cfg = RunConfig {
            ratio: 0.01,
            epochs,
            lambda: arg("--lambda", 2.0),
            samples_per_node: arg("--s", 10.0) as usize,
            eta_features: arg("--eta1", 0.01),
            eta_structure: arg("--eta2", 0.001),
            n_neg: arg("--nneg", 5.0) as usize,
            seed: derive_seed(7, "set", set as u64),
            ..RunConfig::default()
        };
        let out = condense(&h, cfg)?;
        if arg("--trace", 0.0) > 0.0 {
            for r in out.trajectory.iter().step_by(10) {
                println!(
                    "    epoch {:3} total {:>12.4} coarse {:>10.4} fine {:>12.4}",
                    r.epoch, r.total, r.coarse, r.fine
                );
            }
        }
        let t_eval = Instant::now();
        for rep in 0..repeats {
            let model = train_on_condensed(
                &ctx,
                &out.condensed,
                &hgnn,
                derive_seed(7, "eval", (set * repeats + rep) as u64),
            )?;
            cond_accs.push(ctx.test_accuracy(&model)?);
        }
        println!(
            "  set {set}: condense {:.1}s, eval {:.1}s, last acc {:.4}",
            t_eval.duration_since(t_cond).as_secs_f64(),
            t_eval.elapsed().as_secs_f64(),
            cond_accs.last().unwrap()
        );
    }
    let (cond_mean, cond_std) = mean_std(&cond_accs);
    println!(
        "condensed      : {:.4} ± {:.4} ({:.1}s total)",
        cond_mean,
        cond_std,
        t_cond.elapsed().as_secs_f64()
    );
    println!(
        "gap over random: {:.1} points; ratio to full: {:.1}%",
        100.0 * (cond_mean - rand_mean),
        100.0 * cond_mean / full_mean
    );
    Ok(())
}
