//! Plain-text stage artifacts: CSV and JSON readers/writers.
//!
//! Floats are printed with the shortest round-trippable representation and
//! parsed exactly, so write-then-read reproduces the in-memory values bit
//! for bit and reruns produce byte-identical files.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attribution::AttributionResult;
use crate::clustering::ClusterSet;
use crate::embedding::{DataEmbedding, EmbeddingSource};
use crate::encoder::TrajectoryEmbedding;
use crate::error::{Error, Result};

fn schema_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Schema { line, msg: msg.into() }
}

fn parse_f64(line: usize, s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| schema_err(line, format!("bad float {s:?}")))
}

fn parse_usize(line: usize, s: &str) -> Result<usize> {
    s.trim().parse::<usize>().map_err(|_| schema_err(line, format!("bad integer {s:?}")))
}

pub fn write_embeddings_csv(path: &Path, embs: &[TrajectoryEmbedding]) -> Result<()> {
    let dim = embs.first().map_or(0, |e| e.vector.len());
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let header: Vec<String> =
        std::iter::once("traj_id".to_string()).chain((0..dim).map(|j| format!("e{j}"))).collect();
    writeln!(out, "{}", header.join(","))?;
    for e in embs {
        let mut row = e.traj_id.to_string();
        for v in &e.vector {
            row.push(',');
            row.push_str(&v.to_string());
        }
        writeln!(out, "{row}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_embeddings_csv(path: &Path) -> Result<Vec<TrajectoryEmbedding>> {
    let text = std::fs::read_to_string(path)?;
    let mut embs = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let id = parse_usize(i + 1, fields.next().ok_or_else(|| schema_err(i + 1, "empty row"))?)?;
        let vector: Vec<f64> =
            fields.map(|f| parse_f64(i + 1, f)).collect::<Result<_>>()?;
        if vector.is_empty() {
            return Err(schema_err(i + 1, "embedding row has no coordinates"));
        }
        embs.push(TrajectoryEmbedding { traj_id: id, vector });
    }
    if embs.is_empty() {
        return Err(schema_err(1, "no embeddings in file"));
    }
    Ok(embs)
}

/// Assignment rows in `path`, centroid rows in `centroids_path`.
pub fn write_clusters_csv(path: &Path, centroids_path: &Path, cs: &ClusterSet) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "traj_id,cluster_id")?;
    for (traj, &cluster) in cs.assignments.iter().enumerate() {
        writeln!(out, "{traj},{cluster}")?;
    }
    out.flush()?;

    let mut out = std::io::BufWriter::new(std::fs::File::create(centroids_path)?);
    let dim = cs.centroids.first().map_or(0, |c| c.len());
    let header: Vec<String> =
        std::iter::once("cluster_id".to_string()).chain((0..dim).map(|j| format!("c{j}"))).collect();
    writeln!(out, "{}", header.join(","))?;
    for (cluster, centroid) in cs.centroids.iter().enumerate() {
        let mut row = cluster.to_string();
        for v in centroid {
            row.push(',');
            row.push_str(&v.to_string());
        }
        writeln!(out, "{row}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_clusters_csv(path: &Path, centroids_path: &Path) -> Result<ClusterSet> {
    let text = std::fs::read_to_string(path)?;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let (a, b) = line
            .split_once(',')
            .ok_or_else(|| schema_err(i + 1, "expected traj_id,cluster_id"))?;
        pairs.push((parse_usize(i + 1, a)?, parse_usize(i + 1, b)?));
    }
    let mut assignments = vec![usize::MAX; pairs.len()];
    for (traj, cluster) in pairs {
        if traj >= assignments.len() || assignments[traj] != usize::MAX {
            return Err(schema_err(1, format!("trajectory ids not dense at {traj}")));
        }
        assignments[traj] = cluster;
    }

    let text = std::fs::read_to_string(centroids_path)?;
    let mut centroids = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let id = parse_usize(i + 1, fields.next().ok_or_else(|| schema_err(i + 1, "empty row"))?)?;
        if id != centroids.len() {
            return Err(schema_err(i + 1, format!("centroid ids not dense at {id}")));
        }
        centroids.push(fields.map(|f| parse_f64(i + 1, f)).collect::<Result<Vec<f64>>>()?);
    }
    let cs = ClusterSet { assignments, centroids };
    cs.check_partition()?;
    Ok(cs)
}

/// One row per data embedding: source label then the simplex coordinates.
pub fn write_data_embeddings_csv(path: &Path, embs: &[DataEmbedding]) -> Result<()> {
    let dim = embs.first().map_or(0, |e| e.probs.len());
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let header: Vec<String> =
        std::iter::once("source".to_string()).chain((0..dim).map(|j| format!("p{j}"))).collect();
    writeln!(out, "{}", header.join(","))?;
    for e in embs {
        let mut row = e.source.to_string();
        for v in &e.probs {
            row.push(',');
            row.push_str(&v.to_string());
        }
        writeln!(out, "{row}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_data_embeddings_csv(path: &Path) -> Result<Vec<DataEmbedding>> {
    let text = std::fs::read_to_string(path)?;
    let mut embs = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let source: EmbeddingSource = fields
            .next()
            .ok_or_else(|| schema_err(i + 1, "empty row"))?
            .parse()
            .map_err(|e| schema_err(i + 1, format!("{e}")))?;
        let probs: Vec<f64> = fields.map(|f| parse_f64(i + 1, f)).collect::<Result<_>>()?;
        embs.push(DataEmbedding { probs, source });
    }
    if embs.is_empty() {
        return Err(schema_err(1, "no data embeddings in file"));
    }
    Ok(embs)
}

/// Serialized attribution report: one record per evaluated state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionFile {
    pub metric: crate::embedding::SimplexMetric,
    pub results: Vec<AttributionResult>,
}

pub fn write_attributions_json(path: &Path, file: &AttributionFile) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(file)?)?;
    Ok(())
}

pub fn read_attributions_json(path: &Path) -> Result<AttributionFile> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| schema_err(1, format!("bad attribution report: {e}")))
}

/// Table-1-shaped CSV: policy rows with "-" for the original policy's
/// cluster-only columns, then a comment line with the unattributed mass.
pub fn metrics_to_csv(report: &crate::attribution::MetricsReport) -> String {
    let mut out = String::from("policy,ev_s0,mean_abs_dq,action_contrast,w_dist,attribution_freq\n");
    let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| x.to_string());
    for row in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.label,
            row.ev_s0,
            cell(row.mean_abs_dq),
            cell(row.contrast),
            cell(row.w_dist),
            cell(row.freq),
        ));
    }
    out.push_str(&format!("# none_fraction,{}\n", report.none_fraction));
    if report.degenerate_w {
        out.push_str("# warning,all raw embedding distances were zero\n");
    }
    out
}

/// Parsed metrics table: `(label, [5 optional columns])` rows plus the
/// unattributed fraction.
pub struct MetricsCsv {
    pub rows: Vec<(String, Vec<Option<f64>>)>,
    pub none_fraction: f64,
    /// Present when the table was written from all-zero raw distances.
    pub degenerate_w: bool,
}

pub fn read_metrics_csv(path: &Path) -> Result<MetricsCsv> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    let mut none_fraction = None;
    let mut degenerate_w = false;
    for (i, line) in text.lines().enumerate().skip(1) {
        if let Some(rest) = line.strip_prefix("# none_fraction,") {
            none_fraction = Some(parse_f64(i + 1, rest)?);
            continue;
        }
        if line.starts_with("# warning,") {
            degenerate_w = true;
            continue;
        }
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(schema_err(i + 1, format!("expected 6 columns, found {}", fields.len())));
        }
        let values: Vec<Option<f64>> = fields[1..]
            .iter()
            .map(|f| if *f == "-" { Ok(None) } else { parse_f64(i + 1, f).map(Some) })
            .collect::<Result<_>>()?;
        rows.push((fields[0].to_string(), values));
    }
    Ok(MetricsCsv {
        rows,
        none_fraction: none_fraction
            .ok_or_else(|| schema_err(1, "metrics file lacks the none_fraction line"))?,
        degenerate_w,
    })
}
