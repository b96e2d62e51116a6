//! Numerical verification of the theoretical claims: spectral equivalence of
//! the truncated diffusion, the Poisson tail bound, the cosine/MMD identity,
//! the class-level margin bound, and the mis-ranking probability bound.
//! Every check is deterministic per seed and reports violations rather than
//! asserting, so the CLI can render a table and exit nonzero.

use rand::Rng;

use crate::diffusion::{hkpr_diffuse, spectral_oracle, verify_tail_bound};
use crate::error::Result;
use crate::rng;
use crate::standin::random_hypergraph;
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub trials: usize,
    pub violations: usize,
    /// Smallest slack (bound minus value) seen across trials; negative means
    /// a violation and the offending trial is described in `detail`.
    pub worst_margin: f64,
    pub pass: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, trials: usize, violations: usize, worst_margin: f64, detail: String) -> Self {
        CheckResult {
            name: name.to_string(),
            trials,
            violations,
            worst_margin,
            pass: violations == 0,
            detail,
        }
    }
}

/// Truncated diffusion vs the eigendecomposition oracle at K=40 on random
/// hypergraphs with up to 100 nodes; max entry error must stay within 1e-8.
pub fn check_spectral(seed: u64) -> Result<CheckResult> {
    const TOL: f64 = 1e-8;
    const K: usize = 40;
    let mut trials = 0;
    let mut violations = 0;
    let mut worst = f64::INFINITY;
    let mut detail = String::new();
    for (i, &(n, m)) in [(20usize, 14usize), (50, 35), (100, 60)].iter().enumerate() {
        for (j, &lambda) in [1.0, 2.0].iter().enumerate() {
            let h = random_hypergraph(n, m, 6, 3, rng::derive_seed(seed, "spectral", (i * 2 + j) as u64))?;
            let x = h.features();
            let prop = h.propagation()?;
            let truncated = hkpr_diffuse(&prop, x, lambda, K)?.values;
            let oracle = spectral_oracle(&h, x, lambda)?;
            let err = truncated
                .as_slice()
                .iter()
                .zip(oracle.as_slice())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0_f64, f64::max);
            trials += 1;
            let margin = TOL - err;
            if margin < worst {
                worst = margin;
            }
            if err > TOL {
                violations += 1;
                detail = format!("n={n} lambda={lambda}: max err {err:.3e} > {TOL:.0e}");
            }
        }
    }
    Ok(CheckResult::new("spectral", trials, violations, worst, detail))
}

/// Exact Poisson tails against the analytic bound over the reference grid.
pub fn check_tail() -> Result<CheckResult> {
    let lambdas = [0.5, 1.0, 2.0, 3.0, 5.0, 10.0];
    let ts = [1.0, 2.0, 3.0, 4.0];
    let mut trials = 0;
    let mut violations = 0;
    let mut worst = f64::INFINITY;
    let mut detail = String::new();
    for &lambda in &lambdas {
        for &t in &ts {
            let (exact, bound, ok) = verify_tail_bound(lambda, t)?;
            trials += 1;
            let margin = bound - exact;
            if margin < worst {
                worst = margin;
            }
            if !ok {
                violations += 1;
                detail = format!("lambda={lambda} t={t}: exact {exact:.4e} > bound {bound:.4e}");
            }
        }
    }
    Ok(CheckResult::new("tail", trials, violations, worst, detail))
}

/// `1 - cos(a,b) = 0.5 * || a/|a| - b/|b| ||^2` on random nonzero pairs.
pub fn check_mmd_identity(seed: u64, trials: usize) -> Result<CheckResult> {
    const TOL: f64 = 1e-10;
    let mut r = rng::stream(seed, "mmd", 0);
    let mut violations = 0;
    let mut worst = f64::INFINITY;
    let mut detail = String::new();
    for trial in 0..trials {
        let d = r.gen_range(2..16);
        let mut a = vec![0.0; d];
        let mut b = vec![0.0; d];
        loop {
            for v in a.iter_mut() {
                *v = rng::normal(&mut r);
            }
            for v in b.iter_mut() {
                *v = rng::normal(&mut r);
            }
            let na: f64 = a.iter().map(|x| x * x).sum();
            let nb: f64 = b.iter().map(|x| x * x).sum();
            if na > 1e-6 && nb > 1e-6 {
                break;
            }
        }
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        let cos = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / (na * nb);
        let half_sq: f64 = 0.5
            * a.iter()
                .zip(&b)
                .map(|(x, y)| {
                    let z = x / na - y / nb;
                    z * z
                })
                .sum::<f64>();
        let gap = ((1.0 - cos) - half_sq).abs();
        let margin = TOL - gap;
        if margin < worst {
            worst = margin;
        }
        if gap > TOL {
            violations += 1;
            detail = format!("trial {trial}: |lhs - rhs| = {gap:.3e}");
        }
    }
    Ok(CheckResult::new("mmd", trials, violations, worst, detail))
}

/// Margin bound: mean class-level margin >= mean diagonal similarity - eps/C
/// where eps is the exact positive cross-class similarity mass.
pub fn check_margin(seed: u64, trials: usize) -> Result<CheckResult> {
    const FP_SLACK: f64 = 1e-12;
    let mut r = rng::stream(seed, "margin", 0);
    let mut violations = 0;
    let mut worst = f64::INFINITY;
    let mut detail = String::new();
    let mut done = 0;
    for trial in 0..trials {
        let c = if trial % 2 == 0 { 3 } else { 7 };
        let d = 8;
        let unit = |r: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
            let mut v: Vec<f64> = (0..d).map(|_| rng::normal(r)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.iter_mut().for_each(|x| *x /= n);
            v
        };
        let u: Vec<Vec<f64>> = (0..c).map(|_| unit(&mut r)).collect();
        let up: Vec<Vec<f64>> = (0..c).map(|_| unit(&mut r)).collect();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let mut eps = 0.0;
        let mut mean_diag = 0.0;
        let mut mean_margin = 0.0;
        for i in 0..c {
            let diag = dot(&u[i], &up[i]);
            mean_diag += diag;
            let mut best_off = f64::NEG_INFINITY;
            for j in 0..c {
                if i == j {
                    continue;
                }
                let s = dot(&u[i], &up[j]);
                eps += s.max(0.0);
                if s > best_off {
                    best_off = s;
                }
            }
            mean_margin += diag - best_off;
        }
        mean_diag /= c as f64;
        mean_margin /= c as f64;
        let bound = mean_diag - eps / c as f64;
        done += 1;
        let margin = mean_margin - bound + FP_SLACK;
        if margin < worst {
            worst = margin;
        }
        if margin < 0.0 {
            violations += 1;
            detail = format!("trial {trial}: mean margin {mean_margin:.6} < bound {bound:.6}");
        }
    }
    Ok(CheckResult::new("margin", done, violations, worst, detail))
}

/// Mis-ranking bound: empirical `Pr(exists q: s_q >= s_p)` against the mean
/// of `e^l - 1`, with three-sigma Monte-Carlo slack on both estimates.
pub fn check_misranking(seed: u64, trials_per_config: usize) -> Result<CheckResult> {
    let mut violations = 0;
    let mut worst = f64::INFINITY;
    let mut detail = String::new();
    let mut configs = 0;
    for (ci, &n_neg) in [1usize, 5, 10].iter().enumerate() {
        for (gi, &gap) in [0.0, 0.5, 1.5].iter().enumerate() {
            let mut r = rng::stream(seed, "misrank", (ci * 8 + gi) as u64);
            let mut mis = 0usize;
            let mut sum_b = 0.0;
            let mut sum_b2 = 0.0;
            for _ in 0..trials_per_config {
                let s_p = gap + rng::normal(&mut r);
                let mut any = false;
                let mut bound_term = 0.0;
                for _ in 0..n_neg {
                    let s_q = rng::normal(&mut r);
                    if s_q >= s_p {
                        any = true;
                    }
                    bound_term += (s_q - s_p).exp();
                }
                if any {
                    mis += 1;
                }
                sum_b += bound_term;
                sum_b2 += bound_term * bound_term;
            }
            let n = trials_per_config as f64;
            let freq = mis as f64 / n;
            let mean_b = sum_b / n;
            let var_b = (sum_b2 / n - mean_b * mean_b).max(0.0);
            let se_b = (var_b / n).sqrt();
            let se_f = (freq * (1.0 - freq) / n).sqrt();
            let slack = 3.0 * (se_b + se_f);
            configs += 1;
            let margin = mean_b + slack - freq;
            if margin < worst {
                worst = margin;
            }
            if freq > mean_b + slack {
                violations += 1;
                detail = format!(
                    "n_neg={n_neg} gap={gap}: freq {freq:.5} > bound {mean_b:.5} + {slack:.5}"
                );
            }
        }
    }
    Ok(CheckResult::new(
        "misrank",
        configs * trials_per_config,
        violations,
        worst,
        detail,
    ))
}

pub const CHECK_NAMES: [&str; 5] = ["spectral", "tail", "mmd", "margin", "misrank"];

/// Runs the selected checks in parallel (they are independent and internally
/// deterministic); results come back sorted by name.
pub fn run_checks(names: &[&str], seed: u64) -> Result<Vec<CheckResult>> {
    let results: Vec<Result<CheckResult>> = std::thread::scope(|scope| {
        let handles: Vec<_> = names
            .iter()
            .map(|&name| {
                scope.spawn(move || match name {
                    "spectral" => check_spectral(seed),
                    "tail" => check_tail(),
                    "mmd" => check_mmd_identity(seed, 1000),
                    "margin" => check_margin(seed, 1000),
                    "misrank" => check_misranking(seed, 100_000),
                    other => Err(crate::error::Error::Config(format!(
                        "unknown check `{other}`"
                    ))),
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("check thread")).collect()
    });
    let mut results = results.into_iter().collect::<Result<Vec<_>>>()?;
    results.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(results)
}
