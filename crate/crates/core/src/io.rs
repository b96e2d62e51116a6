//! Dataset ingestion: a JSON document format and an equivalent line-based
//! text format for large files.
//!
//! JSON layout:
//! ```json
//! {"features": [[...]], "edges": [[node ids]], "labels": [...], "num_classes": 7}
//! ```
//! (`num_classes` is optional and defaults to `max(labels) + 1`.)
//!
//! Text layout:
//! ```text
//! HYPERGRAPH v1
//! nodes <N> features <d> classes <C>
//! <N lines: label f_1 ... f_d>
//! edges <M>
//! <M lines: whitespace-separated node ids>
//! ```

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypergraph::Hypergraph;
use crate::mat::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Text,
}

impl std::str::FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Format::Json),
            "text" => Ok(Format::Text),
            other => Err(Error::Config(format!("unknown format `{other}`"))),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonDataset {
    features: Vec<Vec<f64>>,
    edges: Vec<Vec<u32>>,
    labels: Vec<i64>,
    #[serde(default)]
    num_classes: Option<usize>,
}

pub fn load_hypergraph(path: &Path, format: Format) -> Result<Hypergraph> {
    match format {
        Format::Json => load_json(path),
        Format::Text => load_text(path),
    }
}

fn build(
    features: Vec<Vec<f64>>,
    edges: Vec<Vec<u32>>,
    labels: Vec<i64>,
    num_classes: Option<usize>,
) -> Result<Hypergraph> {
    let n = features.len();
    let d = features.first().map_or(0, Vec::len);
    for (i, row) in features.iter().enumerate() {
        if row.len() != d {
            return Err(Error::InconsistentDimensions {
                context: format!("feature row {i}"),
                expected: d,
                got: row.len(),
            });
        }
    }
    let classes =
        num_classes.unwrap_or_else(|| labels.iter().map(|&l| l + 1).max().unwrap_or(1).max(1) as usize);
    let mut checked = Vec::with_capacity(labels.len());
    for (i, &l) in labels.iter().enumerate() {
        if l < 0 || l as usize >= classes {
            return Err(Error::LabelOutOfRange {
                node: i,
                label: l,
                num_classes: classes,
            });
        }
        checked.push(l as usize);
    }
    let mut flat = Vec::with_capacity(n * d);
    for row in &features {
        flat.extend_from_slice(row);
    }
    Hypergraph::new(edges, Mat::from_vec(n, d, flat), checked, classes)
}

fn load_json(path: &Path) -> Result<Hypergraph> {
    let raw = std::fs::read_to_string(path)?;
    let ds: JsonDataset = serde_json::from_str(&raw).map_err(|e| Error::ParseFailure {
        context: format!("{}:{}:{}", path.display(), e.line(), e.column()),
        message: e.to_string(),
    })?;
    build(ds.features, ds.edges, ds.labels, ds.num_classes)
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::ParseFailure {
        context: format!("{}:{}", path.display(), line + 1),
        message: message.into(),
    }
}

fn load_text(path: &Path) -> Result<Hypergraph> {
    let raw = std::fs::read_to_string(path)?;
    let lines: Vec<&str> = raw.lines().collect();
    let mut at = 0usize;
    let mut next = |ctx: &str| -> Result<(usize, &str)> {
        while at < lines.len() && lines[at].trim().is_empty() {
            at += 1;
        }
        if at >= lines.len() {
            return Err(parse_err(path, lines.len(), format!("unexpected EOF, wanted {ctx}")));
        }
        at += 1;
        Ok((at - 1, lines[at - 1].trim()))
    };

    let (ln, magic) = next("header")?;
    if magic != "HYPERGRAPH v1" {
        return Err(parse_err(path, ln, "expected `HYPERGRAPH v1`"));
    }
    let (ln, dims) = next("dimension line")?;
    let toks: Vec<&str> = dims.split_whitespace().collect();
    if toks.len() != 6 || toks[0] != "nodes" || toks[2] != "features" || toks[4] != "classes" {
        return Err(parse_err(path, ln, "expected `nodes <N> features <d> classes <C>`"));
    }
    let n: usize = toks[1].parse().map_err(|_| parse_err(path, ln, "bad node count"))?;
    let d: usize = toks[3].parse().map_err(|_| parse_err(path, ln, "bad feature dim"))?;
    let c: usize = toks[5].parse().map_err(|_| parse_err(path, ln, "bad class count"))?;

    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let (ln, line) = next(&format!("node record {i}"))?;
        let mut parts = line.split_whitespace();
        let label: i64 = parts
            .next()
            .ok_or_else(|| parse_err(path, ln, "missing label"))?
            .parse()
            .map_err(|_| parse_err(path, ln, "bad label"))?;
        let row: Vec<f64> = parts
            .map(|t| t.parse::<f64>().map_err(|_| parse_err(path, ln, format!("bad feature value `{t}`"))))
            .collect::<Result<_>>()?;
        if row.len() != d {
            return Err(Error::InconsistentDimensions {
                context: format!("{}:{}", path.display(), ln + 1),
                expected: d,
                got: row.len(),
            });
        }
        labels.push(label);
        features.push(row);
    }

    let (ln, edge_hdr) = next("edges header")?;
    let toks: Vec<&str> = edge_hdr.split_whitespace().collect();
    if toks.len() != 2 || toks[0] != "edges" {
        return Err(parse_err(path, ln, "expected `edges <M>`"));
    }
    let m: usize = toks[1].parse().map_err(|_| parse_err(path, ln, "bad edge count"))?;
    let mut edges = Vec::with_capacity(m);
    for e in 0..m {
        let (ln, line) = next(&format!("edge record {e}"))?;
        let ids: Vec<u32> = line
            .split_whitespace()
            .map(|t| t.parse::<u32>().map_err(|_| parse_err(path, ln, format!("bad node id `{t}`"))))
            .collect::<Result<_>>()?;
        if ids.is_empty() {
            return Err(Error::EmptyHyperedge { index: e });
        }
        edges.push(ids);
    }

    build(features, edges, labels, Some(c))
}

/// Serializes node features, edges and labels (masks are derived at run
/// time from a seed, never stored).
pub fn save_json(
    path: &Path,
    features: &Mat,
    edges: &[Vec<u32>],
    labels: &[usize],
    num_classes: usize,
) -> Result<()> {
    let ds = JsonDataset {
        features: (0..features.rows()).map(|i| features.row(i).to_vec()).collect(),
        edges: edges.to_vec(),
        labels: labels.iter().map(|&l| l as i64).collect(),
        num_classes: Some(num_classes),
    };
    let mut out = serde_json::to_string(&ds)?;
    out.push('\n');
    std::fs::write(path, out)?;
    Ok(())
}

pub fn save_text(
    path: &Path,
    features: &Mat,
    edges: &[Vec<u32>],
    labels: &[usize],
    num_classes: usize,
) -> Result<()> {
    let mut out = String::new();
    out.push_str("HYPERGRAPH v1\n");
    let _ = writeln!(
        out,
        "nodes {} features {} classes {}",
        features.rows(),
        features.cols(),
        num_classes
    );
    for i in 0..features.rows() {
        let _ = write!(out, "{}", labels[i]);
        for v in features.row(i) {
            let _ = write!(out, " {v}");
        }
        out.push('\n');
    }
    let _ = writeln!(out, "edges {}", edges.len());
    for e in edges {
        let ids: Vec<String> = e.iter().map(u32::to_string).collect();
        out.push_str(&ids.join(" "));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        use std::io::Write;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn json_three_node_example() {
        let f = write_tmp(
            r#"{"features": [[1.0],[2.0],[3.0]], "edges": [[0,1],[1,2]], "labels": [0,1,0]}"#,
        );
        let h = load_hypergraph(f.path(), Format::Json).unwrap();
        assert_eq!(h.num_nodes(), 3);
        assert_eq!(h.num_edges(), 2);
        assert_eq!(h.degrees().d_v, vec![1.0, 2.0, 1.0]);
        assert_eq!(h.degrees().d_e, vec![2.0, 2.0]);
    }

    #[test]
    fn empty_edge_rejected_with_index() {
        let f = write_tmp(r#"{"features": [[1.0],[2.0]], "edges": [[0],[]], "labels": [0,0]}"#);
        let err = load_hypergraph(f.path(), Format::Json).unwrap_err();
        assert!(matches!(err, Error::EmptyHyperedge { index: 1 }));
    }

    #[test]
    fn label_out_of_range_reported() {
        let f = write_tmp(
            r#"{"features": [[1.0],[2.0]], "edges": [[0,1]], "labels": [0,3], "num_classes": 2}"#,
        );
        let err = load_hypergraph(f.path(), Format::Json).unwrap_err();
        assert!(matches!(err, Error::LabelOutOfRange { node: 1, label: 3, .. }));
    }

    #[test]
    fn ragged_features_reported() {
        let f = write_tmp(r#"{"features": [[1.0,2.0],[2.0]], "edges": [[0,1]], "labels": [0,0]}"#);
        let err = load_hypergraph(f.path(), Format::Json).unwrap_err();
        assert!(matches!(err, Error::InconsistentDimensions { .. }));
    }

    #[test]
    fn text_round_trip() {
        let f = write_tmp(
            "HYPERGRAPH v1\nnodes 3 features 2 classes 2\n0 1.5 0.25\n1 -2.0 0.5\n0 0.0 1.0\nedges 2\n0 1\n1 2\n",
        );
        let h = load_hypergraph(f.path(), Format::Text).unwrap();
        assert_eq!(h.num_nodes(), 3);
        assert_eq!(h.features().get(0, 1), 0.25);

        let out = tempfile::NamedTempFile::new().unwrap();
        let edges: Vec<Vec<u32>> = vec![vec![0, 1], vec![1, 2]];
        let labels: Vec<usize> = (0..3).map(|i| h.eval_label(i)).collect();
        save_text(out.path(), h.features(), &edges, &labels, 2).unwrap();
        let h2 = load_hypergraph(out.path(), Format::Text).unwrap();
        assert_eq!(h2.features(), h.features());
    }

    #[test]
    fn text_parse_error_carries_line() {
        let f = write_tmp("HYPERGRAPH v1\nnodes 2 features 1 classes 2\n0 1.0\n1 oops\nedges 0\n");
        let err = load_hypergraph(f.path(), Format::Text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(":4"), "error should cite line 4, got {msg}");
    }
}
