//! On-disk artifacts: condensed outputs (raw little-endian f64 matrices with
//! JSON headers), coreset selections, run manifests, and the evaluation
//! report CSV.
//!
//! Everything except the manifest (which carries timestamps) is
//! byte-reproducible: identical runs write identical files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::condense::{CondenseOutput, EpochRecord, UpdatedGroup};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{mean_std, RunRow};
use crate::hypergraph::CondensedHypergraph;
use crate::mat::Mat;

#[derive(Debug, Serialize, Deserialize)]
struct MatrixHeader {
    rows: usize,
    cols: usize,
    dtype: String,
    order: String,
}

pub fn write_matrix_f64(path: &Path, m: &Mat) -> Result<()> {
    let header = MatrixHeader {
        rows: m.rows(),
        cols: m.cols(),
        dtype: "f64le".into(),
        order: "row-major".into(),
    };
    let mut header_json = serde_json::to_string(&header)?;
    header_json.push('\n');
    std::fs::write(path.with_extension("json"), header_json)?;
    let mut bytes = Vec::with_capacity(m.rows() * m.cols() * 8);
    for v in m.as_slice() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_matrix_f64(path: &Path) -> Result<Mat> {
    let header: MatrixHeader =
        serde_json::from_str(&std::fs::read_to_string(path.with_extension("json"))?)?;
    if header.dtype != "f64le" || header.order != "row-major" {
        return Err(Error::Config(format!(
            "unsupported matrix encoding {}/{}",
            header.dtype, header.order
        )));
    }
    let bytes = std::fs::read(path)?;
    let expect = header.rows * header.cols * 8;
    if bytes.len() != expect {
        return Err(Error::InconsistentDimensions {
            context: format!("{} payload bytes", path.display()),
            expected: expect,
            got: bytes.len(),
        });
    }
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Mat::from_vec(header.rows, header.cols, data))
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelsFile {
    labels: Vec<usize>,
    num_classes: usize,
}

/// Writes one condensed set: features, incidence, labels, the loss
/// trajectory and the resolved config.
pub fn write_condensed(dir: &Path, out: &CondenseOutput) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_matrix_f64(&dir.join("xprime.f64"), &out.condensed.features)?;
    write_matrix_f64(&dir.join("hprime.f64"), &out.condensed.incidence)?;
    let labels = LabelsFile {
        labels: out.condensed.labels.clone(),
        num_classes: out.condensed.num_classes,
    };
    let mut labels_json = serde_json::to_string(&labels)?;
    labels_json.push('\n');
    std::fs::write(dir.join("yprime.json"), labels_json)?;
    std::fs::write(dir.join("loss.csv"), trajectory_csv(&out.trajectory))?;
    let mut cfg_json = serde_json::to_string_pretty(&out.config)?;
    cfg_json.push('\n');
    std::fs::write(dir.join("config.json"), cfg_json)?;
    Ok(())
}

pub fn read_condensed(dir: &Path) -> Result<(CondensedHypergraph, RunConfig)> {
    let features = read_matrix_f64(&dir.join("xprime.f64"))?;
    let incidence = read_matrix_f64(&dir.join("hprime.f64"))?;
    let labels: LabelsFile = serde_json::from_str(&std::fs::read_to_string(dir.join("yprime.json"))?)?;
    let config: RunConfig = serde_json::from_str(&std::fs::read_to_string(dir.join("config.json"))?)?;
    let condensed = CondensedHypergraph {
        features,
        incidence,
        labels: labels.labels,
        num_classes: labels.num_classes,
    };
    condensed.validate()?;
    Ok((condensed, config))
}

fn trajectory_csv(trajectory: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,total,coarse,fine,w_coarse,w_fine,updated\n");
    for r in trajectory {
        let group = match r.updated {
            UpdatedGroup::Features => "features",
            UpdatedGroup::Structure => "structure",
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.epoch, r.total, r.coarse, r.fine, r.w_coarse, r.w_fine, group
        );
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoresetFile {
    pub method: String,
    pub ratio: f64,
    pub seed: u64,
    pub indices: Vec<usize>,
}

pub fn write_coreset(dir: &Path, file: &CoresetFile) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut json = serde_json::to_string(file)?;
    json.push('\n');
    std::fs::write(dir.join("coreset.json"), json)?;
    Ok(())
}

pub fn read_coreset(dir: &Path) -> Result<CoresetFile> {
    Ok(serde_json::from_str(&std::fs::read_to_string(
        dir.join("coreset.json"),
    )?)?)
}

/// Kind of artifact stored in a set directory.
pub fn detect_artifact(dir: &Path) -> Result<ArtifactKind> {
    if dir.join("config.json").exists() && dir.join("xprime.f64").exists() {
        Ok(ArtifactKind::Condensed)
    } else if dir.join("coreset.json").exists() {
        Ok(ArtifactKind::Coreset)
    } else {
        Err(Error::Config(format!(
            "{} holds neither a condensed set nor a coreset",
            dir.display()
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArtifactKind {
    Condensed,
    Coreset,
}

/// Set subdirectories of a run directory (`set_00`, `set_01`, ...); the
/// directory itself when it is a single artifact.
pub fn set_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut sets: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("set_"))
        })
        .collect();
    if sets.is_empty() {
        if detect_artifact(dir).is_ok() {
            return Ok(vec![dir.to_path_buf()]);
        }
        return Err(Error::Config(format!(
            "{} contains no set_* directories",
            dir.display()
        )));
    }
    sets.sort();
    Ok(sets)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        let _ = write!(out, "{b:02x}");
    }
    out
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetStamp {
    pub path: String,
    pub sha256: String,
    pub nodes: usize,
    pub edges: usize,
    pub classes: usize,
    pub dim: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SetEntry {
    pub set: usize,
    pub seed: u64,
    pub dir: String,
}

/// Reproducibility record written next to every command's outputs. The
/// timestamps make manifests non-identical across runs; all other artifacts
/// and reports are byte-reproducible from the manifest's seeds and config.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub root_seed: u64,
    /// Seed of the train/val/test stratification, derived from the root
    /// seed; evaluation reuses it so the protocol split never drifts.
    pub split_seed: u64,
    pub dataset: Option<DatasetStamp>,
    pub config: serde_json::Value,
    pub sets: Vec<SetEntry>,
    pub outputs: Vec<String>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

pub fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut json = serde_json::to_string_pretty(manifest)?;
    json.push('\n');
    std::fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest> {
    Ok(serde_json::from_str(&std::fs::read_to_string(
        dir.join("manifest.json"),
    )?)?)
}

/// Report CSV: one row per run plus one summary row per (method, ratio).
/// Runs are sorted for byte-stable output.
pub fn report_csv(rows: &[RunRow]) -> String {
    let mut sorted: Vec<&RunRow> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        (&a.method, ordered(a.ratio), a.set, a.repeat).cmp(&(
            &b.method,
            ordered(b.ratio),
            b.set,
            b.repeat,
        ))
    });
    let mut out = String::from("record,method,ratio,set,repeat,seed,accuracy,mean,std\n");
    for r in &sorted {
        let _ = writeln!(
            out,
            "run,{},{},{},{},{},{},,",
            r.method, r.ratio, r.set, r.repeat, r.seed, r.accuracy
        );
    }
    let mut groups: Vec<(String, f64)> = Vec::new();
    for r in &sorted {
        if !groups.iter().any(|(m, q)| m == &r.method && *q == r.ratio) {
            groups.push((r.method.clone(), r.ratio));
        }
    }
    for (method, ratio) in groups {
        let accs: Vec<f64> = sorted
            .iter()
            .filter(|r| r.method == method && r.ratio == ratio)
            .map(|r| r.accuracy)
            .collect();
        let (mean, std) = mean_std(&accs);
        let _ = writeln!(out, "summary,{method},{ratio},,,,,{mean},{std}");
    }
    out
}

pub fn write_report(path: &Path, rows: &[RunRow]) -> Result<()> {
    std::fs::write(path, report_csv(rows))?;
    Ok(())
}

/// Parses the run rows back out of a report CSV (summary rows are skipped;
/// they are recomputed on aggregation).
pub fn read_report(path: &Path) -> Result<Vec<RunRow>> {
    let raw = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (ln, line) in raw.lines().enumerate().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.is_empty() || fields[0] != "run" {
            continue;
        }
        if fields.len() != 9 {
            return Err(Error::ParseFailure {
                context: format!("{}:{}", path.display(), ln + 1),
                message: format!("expected 9 fields, got {}", fields.len()),
            });
        }
        let parse_err = |what: &str| Error::ParseFailure {
            context: format!("{}:{}", path.display(), ln + 1),
            message: format!("bad {what}"),
        };
        rows.push(RunRow {
            method: fields[1].to_string(),
            ratio: fields[2].parse().map_err(|_| parse_err("ratio"))?,
            set: fields[3].parse().map_err(|_| parse_err("set"))?,
            repeat: fields[4].parse().map_err(|_| parse_err("repeat"))?,
            seed: fields[5].parse().map_err(|_| parse_err("seed"))?,
            accuracy: fields[6].parse().map_err(|_| parse_err("accuracy"))?,
        });
    }
    Ok(rows)
}

fn ordered(x: f64) -> u64 {
    // total order for nonnegative finite ratios
    x.to_bits()
}

pub fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = Mat::from_vec(2, 3, vec![1.5, -2.25, 0.0, f64::MIN_POSITIVE, 1e300, -0.5]);
        let path = dir.path().join("m.f64");
        write_matrix_f64(&path, &m).unwrap();
        let back = read_matrix_f64(&path).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn report_round_trip_and_stable_bytes() {
        let rows = vec![
            RunRow {
                method: "ahgcdd".into(),
                ratio: 0.01,
                set: 1,
                repeat: 0,
                seed: 5,
                accuracy: 0.75,
            },
            RunRow {
                method: "ahgcdd".into(),
                ratio: 0.01,
                set: 0,
                repeat: 0,
                seed: 4,
                accuracy: 0.8,
            },
            RunRow {
                method: "random".into(),
                ratio: 0.01,
                set: 0,
                repeat: 0,
                seed: 4,
                accuracy: 0.45,
            },
        ];
        let a = report_csv(&rows);
        let mut shuffled = rows.clone();
        shuffled.reverse();
        let b = report_csv(&shuffled);
        assert_eq!(a, b, "report bytes must not depend on row order");

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.csv");
        write_report(&path, &rows).unwrap();
        let back = read_report(&path).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back[0].method, "ahgcdd");
        assert_eq!(back[0].set, 0);
    }

    #[test]
    fn condensed_round_trip() {
        use crate::condense::CondenseOutput;
        let dir = tempfile::tempdir().unwrap();
        let out = CondenseOutput {
            condensed: CondensedHypergraph {
                features: Mat::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]),
                incidence: Mat::from_vec(2, 2, vec![0.5, 0.0, 0.1, 0.4]),
                labels: vec![0, 1],
                num_classes: 2,
            },
            trajectory: vec![],
            config: RunConfig::default(),
        };
        write_condensed(dir.path(), &out).unwrap();
        let (cond, cfg) = read_condensed(dir.path()).unwrap();
        assert_eq!(cond, out.condensed);
        assert_eq!(cfg, out.config);
        assert_eq!(detect_artifact(dir.path()).unwrap(), ArtifactKind::Condensed);
    }
}
