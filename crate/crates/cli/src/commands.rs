//! Subcommand implementations.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context};

use hypercondense_core::artifacts::{
    detect_artifact, now_unix, read_condensed, read_coreset, read_manifest, read_report,
    set_dirs, sha256_file, write_condensed, write_coreset, write_manifest, write_report,
    ArtifactKind, CoresetFile, DatasetStamp, RunManifest, SetEntry,
};
use hypercondense_core::condense::Condenser;
use hypercondense_core::config::{HgnnParams, RunConfig};
use hypercondense_core::coreset::CoresetMethod;
use hypercondense_core::error::Error as CoreError;
use hypercondense_core::eval::{coreset_for, mean_std, train_on_condensed, train_on_coreset, train_on_full, EvalContext, RunRow};
use hypercondense_core::hypergraph::{make_splits, Hypergraph};
use hypercondense_core::io::{load_hypergraph, save_json, save_text, Format};
use hypercondense_core::rng::derive_seed;
use hypercondense_core::standin::{generate_standin, StandinParams};
use hypercondense_core::theory::{run_checks, CHECK_NAMES};

const SPLIT_FRACTIONS: (f64, f64, f64) = (0.5, 0.25, 0.25);

pub fn classify_error(err: &anyhow::Error) -> i32 {
    match err.downcast_ref::<CoreError>() {
        Some(CoreError::ShapeMismatch { .. })
        | Some(CoreError::NonScalarLoss { .. })
        | Some(CoreError::NonFiniteLoss { .. }) => 1,
        Some(_) => 2,
        None => {
            if err.downcast_ref::<std::io::Error>().is_some()
                || err.downcast_ref::<serde_json::Error>().is_some()
            {
                2
            } else {
                1
            }
        }
    }
}

fn parse_format(s: &str) -> anyhow::Result<Format> {
    Ok(s.parse::<Format>()?)
}

/// Accepts `0.01` or `1%`.
fn parse_ratio(s: &str) -> anyhow::Result<f64> {
    let t = s.trim();
    let value = if let Some(pct) = t.strip_suffix('%') {
        pct.trim().parse::<f64>().map(|v| v / 100.0)
    } else {
        t.parse::<f64>()
    };
    value.map_err(|_| anyhow!(CoreError::Config(format!("bad ratio `{s}`"))))
}

fn load_data(path: &Path, format: &str) -> anyhow::Result<(Hypergraph, DatasetStamp)> {
    let format = parse_format(format)?;
    let h = load_hypergraph(path, format)?;
    let stamp = DatasetStamp {
        path: path.display().to_string(),
        sha256: sha256_file(path)?,
        nodes: h.num_nodes(),
        edges: h.num_edges(),
        classes: h.num_classes(),
        dim: h.feature_dim(),
    };
    Ok((h, stamp))
}

pub fn ingest(path: &Path, format: &str) -> anyhow::Result<i32> {
    let (h, stamp) = load_data(path, format)?;
    println!("nodes:            {}", h.num_nodes());
    println!("hyperedges:       {}", h.num_edges());
    println!("total membership: {}", h.total_membership());
    println!("feature dim:      {}", h.feature_dim());
    println!("classes:          {}", h.num_classes());
    println!("self-loops added: {}", h.self_loop_nodes().len());
    println!("sha256:           {}", stamp.sha256);
    Ok(0)
}

pub struct GenArgs {
    pub out: PathBuf,
    pub format: String,
    pub nodes: usize,
    pub edges: usize,
    pub members: usize,
    pub classes: usize,
    pub dim: usize,
    pub homophily: f64,
    pub noise: f64,
    pub separation: f64,
    pub seed: u64,
}

pub fn gen(args: GenArgs) -> anyhow::Result<i32> {
    let params = StandinParams {
        nodes: args.nodes,
        edges: args.edges,
        total_membership: args.members,
        classes: args.classes,
        dim: args.dim,
        homophily: args.homophily,
        noise: args.noise,
        separation: args.separation,
        seed: args.seed,
    };
    let h = generate_standin(&params)?;
    let edges: Vec<Vec<u32>> = (0..h.num_edges())
        .map(|e| h.edge_nodes().row(e).to_vec())
        .collect();
    let labels: Vec<usize> = (0..h.num_nodes()).map(|i| h.eval_label(i)).collect();
    match parse_format(&args.format)? {
        Format::Json => save_json(&args.out, h.features(), &edges, &labels, h.num_classes())?,
        Format::Text => save_text(&args.out, h.features(), &edges, &labels, h.num_classes())?,
    }
    println!(
        "wrote {} ({} nodes, {} edges, {} memberships, dim {}, {} classes)",
        args.out.display(),
        h.num_nodes(),
        h.num_edges(),
        h.total_membership(),
        h.feature_dim(),
        h.num_classes()
    );
    Ok(0)
}

pub struct CondenseArgs {
    pub data: PathBuf,
    pub format: String,
    pub config: Option<PathBuf>,
    pub ratio: Option<String>,
    pub lambda: Option<f64>,
    pub k_override: Option<usize>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub sets: usize,
    pub env_seed: Option<u64>,
}

pub fn condense(args: CondenseArgs) -> anyhow::Result<i32> {
    let started = now_unix();
    let mut cfg: RunConfig = match &args.config {
        Some(path) => serde_json::from_str(
            &std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?,
        )
        .map_err(|e| anyhow!(CoreError::Config(format!("config schema: {e}"))))?,
        None => RunConfig::default(),
    };
    if let Some(r) = &args.ratio {
        cfg.ratio = parse_ratio(r)?;
    }
    if let Some(l) = args.lambda {
        cfg.lambda = l;
    }
    if let Some(k) = args.k_override {
        cfg.k_override = Some(k);
    }
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    // precedence: flag > config file > environment > 0
    let root_seed = args
        .seed
        .or((cfg.seed != 0).then_some(cfg.seed))
        .or(args.env_seed)
        .unwrap_or(0);
    cfg.seed = root_seed;
    cfg.validate()?;

    let (h, stamp) = load_data(&args.data, &args.format)?;
    let split_seed = derive_seed(root_seed, "split", 0);
    let h = make_splits(h, SPLIT_FRACTIONS, split_seed)?;

    std::fs::create_dir_all(&args.out)?;
    let mut sets = Vec::new();
    for set in 0..args.sets {
        let t0 = Instant::now();
        let set_seed = derive_seed(root_seed, "set", set as u64);
        let set_cfg = RunConfig {
            seed: set_seed,
            ..cfg.clone()
        };
        let out = Condenser::new(&h, set_cfg)?.run()?;
        let dir_name = format!("set_{set:02}");
        write_condensed(&args.out.join(&dir_name), &out)?;
        let last = out.trajectory.last().map(|r| r.total).unwrap_or(f64::NAN);
        println!(
            "set {set}: {} synthetic nodes, final loss {last:.4}, {:.1}s",
            out.condensed.num_nodes(),
            t0.elapsed().as_secs_f64()
        );
        sets.push(SetEntry {
            set,
            seed: set_seed,
            dir: dir_name,
        });
    }
    debug_assert_eq!(h.test_label_reads(), 0, "condensation read test labels");

    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: "condense".into(),
        root_seed,
        split_seed,
        dataset: Some(stamp),
        config: serde_json::to_value(&cfg)?,
        outputs: sets.iter().map(|s| s.dir.clone()).collect(),
        sets,
        started_unix: started,
        finished_unix: now_unix(),
    };
    write_manifest(&args.out, &manifest)?;
    Ok(0)
}

pub struct BaselineArgs {
    pub data: PathBuf,
    pub format: String,
    pub method: String,
    pub ratio: String,
    pub lambda: f64,
    pub seed: u64,
    pub out: PathBuf,
    pub sets: usize,
}

pub fn baseline(args: BaselineArgs) -> anyhow::Result<i32> {
    let started = now_unix();
    let method: CoresetMethod = args.method.parse()?;
    let ratio = parse_ratio(&args.ratio)?;
    let (h, stamp) = load_data(&args.data, &args.format)?;
    let split_seed = derive_seed(args.seed, "split", 0);
    let h = make_splits(h, SPLIT_FRACTIONS, split_seed)?;

    std::fs::create_dir_all(&args.out)?;
    let mut sets = Vec::new();
    for set in 0..args.sets {
        let set_seed = derive_seed(args.seed, "set", set as u64);
        let indices = coreset_for(&h, method, ratio, args.lambda, set_seed)?;
        let dir_name = format!("set_{set:02}");
        write_coreset(
            &args.out.join(&dir_name),
            &CoresetFile {
                method: method.name().to_string(),
                ratio,
                seed: set_seed,
                indices: indices.clone(),
            },
        )?;
        println!("set {set}: selected {} nodes", indices.len());
        sets.push(SetEntry {
            set,
            seed: set_seed,
            dir: dir_name,
        });
    }
    if h.test_label_reads() != 0 {
        bail!(CoreError::Config(
            "protocol violation: coreset selection read test labels".into()
        ));
    }

    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: "baseline".into(),
        root_seed: args.seed,
        split_seed,
        dataset: Some(stamp),
        config: serde_json::json!({"method": method.name(), "ratio": ratio, "lambda": args.lambda}),
        outputs: sets.iter().map(|s| s.dir.clone()).collect(),
        sets,
        started_unix: started,
        finished_unix: now_unix(),
    };
    write_manifest(&args.out, &manifest)?;
    Ok(0)
}

pub struct EvaluateArgs {
    pub condensed: Option<PathBuf>,
    pub data: PathBuf,
    pub format: String,
    pub full: bool,
    pub repeats: usize,
    pub sets: Option<usize>,
    pub jobs: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

enum EvalTarget {
    Condensed(Box<hypercondense_core::hypergraph::CondensedHypergraph>, f64),
    Coreset(Vec<usize>, String, f64),
}

pub fn evaluate(args: EvaluateArgs) -> anyhow::Result<i32> {
    let started = now_unix();
    let (h, stamp) = load_data(&args.data, &args.format)?;
    let hgnn = HgnnParams::default();

    let (split_seed, targets, out_dir, source_manifest) = if args.full {
        let out_dir = args
            .out
            .clone()
            .ok_or_else(|| anyhow!(CoreError::Config("--full requires --out".into())))?;
        (derive_seed(args.seed, "split", 0), Vec::new(), out_dir, None)
    } else {
        let dir = args.condensed.clone().expect("clap enforces --condensed");
        let manifest = read_manifest(&dir)
            .with_context(|| format!("reading manifest in {}", dir.display()))?;
        if let Some(ds) = &manifest.dataset {
            if ds.sha256 != stamp.sha256 {
                bail!(CoreError::Config(format!(
                    "dataset fingerprint mismatch: artifacts built from {}, got {}",
                    ds.sha256, stamp.sha256
                )));
            }
        }
        let mut targets = Vec::new();
        let mut dirs = set_dirs(&dir)?;
        if let Some(cap) = args.sets {
            dirs.truncate(cap);
        }
        for set_dir in dirs {
            match detect_artifact(&set_dir)? {
                ArtifactKind::Condensed => {
                    let (cond, cfg) = read_condensed(&set_dir)?;
                    targets.push(EvalTarget::Condensed(Box::new(cond), cfg.ratio));
                }
                ArtifactKind::Coreset => {
                    let file = read_coreset(&set_dir)?;
                    targets.push(EvalTarget::Coreset(file.indices, file.method, file.ratio));
                }
            }
        }
        let out_dir = args.out.clone().unwrap_or_else(|| dir.clone());
        (manifest.split_seed, targets, out_dir, Some(manifest))
    };

    let h = make_splits(h, SPLIT_FRACTIONS, split_seed)?;
    let t_eval = Instant::now();
    let rows: Vec<RunRow> = if args.full {
        let ctx = EvalContext::new(&h)?;
        let mut rows = Vec::new();
        for repeat in 0..args.repeats {
            let seed = derive_seed(args.seed, "eval", repeat as u64);
            let model = train_on_full(&ctx, &h, &hgnn, seed)?;
            rows.push(RunRow {
                method: "full".into(),
                ratio: 1.0,
                set: 0,
                repeat,
                seed,
                accuracy: ctx.test_accuracy(&model)?,
            });
        }
        rows
    } else {
        run_targets(&h, &targets, args.repeats, args.jobs, args.seed, &hgnn)?
    };

    let accs: Vec<f64> = rows.iter().map(|r| r.accuracy).collect();
    let (mean, std) = mean_std(&accs);
    std::fs::create_dir_all(&out_dir)?;
    write_report(&out_dir.join("report.csv"), &rows)?;
    let timings = serde_json::json!({
        "evaluate_secs": t_eval.elapsed().as_secs_f64(),
        "runs": rows.len(),
    });
    std::fs::write(
        out_dir.join("timings.json"),
        serde_json::to_string_pretty(&timings)? + "\n",
    )?;
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: "evaluate".into(),
        root_seed: args.seed,
        split_seed,
        dataset: Some(stamp),
        config: serde_json::json!({
            "repeats": args.repeats,
            "full": args.full,
            "hgnn": hgnn,
            "source": source_manifest.as_ref().map(|m| m.command.clone()),
        }),
        sets: Vec::new(),
        outputs: vec!["report.csv".into()],
        started_unix: started,
        finished_unix: now_unix(),
    };
    write_manifest(&out_dir, &manifest)?;
    println!(
        "{} runs: mean accuracy {:.4} ± {:.4} -> {}",
        rows.len(),
        mean,
        std,
        out_dir.join("report.csv").display()
    );
    Ok(0)
}

fn run_targets(
    h: &Hypergraph,
    targets: &[EvalTarget],
    repeats: usize,
    jobs: usize,
    eval_seed: u64,
    hgnn: &HgnnParams,
) -> anyhow::Result<Vec<RunRow>> {
    let work: Vec<usize> = (0..targets.len()).collect();
    let chunks: Vec<Vec<usize>> = (0..jobs.min(targets.len().max(1)))
        .map(|j| work.iter().copied().filter(|i| i % jobs == j).collect())
        .collect();
    let results: Vec<anyhow::Result<Vec<RunRow>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = chunks
            .into_iter()
            .map(|chunk| {
                scope.spawn(move || -> anyhow::Result<Vec<RunRow>> {
                    let ctx = EvalContext::new(h)?;
                    let mut rows = Vec::new();
                    for set in chunk {
                        for repeat in 0..repeats {
                            let seed =
                                derive_seed(eval_seed, "eval", (set * repeats + repeat) as u64);
                            let (method, ratio, model) = match &targets[set] {
                                EvalTarget::Condensed(cond, ratio) => (
                                    "ahgcdd".to_string(),
                                    *ratio,
                                    train_on_condensed(&ctx, cond, hgnn, seed)?,
                                ),
                                EvalTarget::Coreset(indices, method, ratio) => (
                                    method.clone(),
                                    *ratio,
                                    train_on_coreset(&ctx, h, indices, hgnn, seed)?,
                                ),
                            };
                            rows.push(RunRow {
                                method,
                                ratio,
                                set,
                                repeat,
                                seed,
                                accuracy: ctx.test_accuracy(&model)?,
                            });
                        }
                    }
                    Ok(rows)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("eval worker")).collect()
    });
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    rows.sort_by_key(|r| (r.set, r.repeat));
    Ok(rows)
}

pub fn verify(check: &str, seed: u64, json_out: Option<&Path>) -> anyhow::Result<i32> {
    let names: Vec<&str> = match check {
        "all" => CHECK_NAMES.to_vec(),
        "tail-bound" => vec!["tail"],
        other if CHECK_NAMES.contains(&other) => vec![other],
        other => bail!(CoreError::Config(format!(
            "unknown check `{other}` (expected all|{})",
            CHECK_NAMES.join("|")
        ))),
    };
    let results = run_checks(&names, seed)?;
    println!(
        "{:<10} {:>9} {:>11} {:>14}  result",
        "check", "trials", "violations", "worst margin"
    );
    let mut all_pass = true;
    for r in &results {
        println!(
            "{:<10} {:>9} {:>11} {:>14.3e}  {}",
            r.name,
            r.trials,
            r.violations,
            r.worst_margin,
            if r.pass { "PASS" } else { "FAIL" }
        );
        if !r.pass {
            all_pass = false;
            eprintln!("  {}: {}", r.name, r.detail);
        }
    }
    if let Some(path) = json_out {
        std::fs::write(path, serde_json::to_string_pretty(&results)? + "\n")?;
    }
    Ok(if all_pass { 0 } else { 3 })
}

pub fn report(dirs: &[PathBuf], out: &Path, plot_data: Option<&Path>) -> anyhow::Result<i32> {
    if dirs.is_empty() {
        bail!(CoreError::Config("report needs at least one run directory".into()));
    }
    let mut fingerprint: Option<String> = None;
    let mut rows: Vec<RunRow> = Vec::new();
    for dir in dirs {
        let manifest = read_manifest(dir)
            .with_context(|| format!("reading manifest in {}", dir.display()))?;
        let ds = manifest
            .dataset
            .ok_or_else(|| anyhow!(CoreError::Config(format!("{} has no dataset stamp", dir.display()))))?;
        match &fingerprint {
            None => fingerprint = Some(ds.sha256.clone()),
            Some(f) if *f != ds.sha256 => bail!(CoreError::Config(format!(
                "refusing to aggregate mixed datasets: {} vs {}",
                f, ds.sha256
            ))),
            _ => {}
        }
        rows.extend(read_report(&dir.join("report.csv"))?);
    }
    write_report(out, &rows)?;
    println!("wrote {} ({} runs)", out.display(), rows.len());

    if let Some(plot_dir) = plot_data {
        std::fs::create_dir_all(plot_dir)?;
        let mut groups: Vec<(String, f64)> = Vec::new();
        for r in &rows {
            if !groups.iter().any(|(m, q)| m == &r.method && *q == r.ratio) {
                groups.push((r.method.clone(), r.ratio));
            }
        }
        groups.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.partial_cmp(&b.1).unwrap()));
        let mut csv = String::from("method,ratio,mean,std\n");
        for (method, ratio) in groups {
            let accs: Vec<f64> = rows
                .iter()
                .filter(|r| r.method == method && r.ratio == ratio)
                .map(|r| r.accuracy)
                .collect();
            let (mean, std) = mean_std(&accs);
            csv.push_str(&format!("{method},{ratio},{mean},{std}\n"));
        }
        std::fs::write(plot_dir.join("accuracy_vs_ratio.csv"), csv)?;
    }
    Ok(0)
}
