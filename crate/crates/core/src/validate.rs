//! Post-run validation: replays every module's invariants against the
//! artifacts of a completed run directory.

use std::path::Path;

use crate::artifacts::{
    read_attributions_json, read_clusters_csv, read_data_embeddings_csv, read_embeddings_csv,
    read_metrics_csv,
};
use crate::data::{read_dataset, replay_check};
use crate::embedding::EmbeddingSource;
use crate::error::{Error, Result};
use crate::gridworld::GridLayout;
use crate::offline_rl::TabularPolicy;
use crate::pipeline::RunConfig;

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn record(checks: &mut Vec<Check>, name: &'static str, result: Result<String>) {
    match result {
        Ok(detail) => checks.push(Check { name, passed: true, detail }),
        Err(e) => checks.push(Check { name, passed: false, detail: e.to_string() }),
    }
}

/// Runs every artifact-level invariant check; missing artifacts fail the
/// corresponding check.
pub fn validate_run(dir: &Path) -> Result<ValidationReport> {
    if !dir.join("config.resolved").exists() {
        return Err(Error::Validation(format!(
            "{} does not look like a run directory (config.resolved missing)",
            dir.display()
        )));
    }
    let config = RunConfig::load(&dir.join("config.resolved"))?;
    let layout_text = std::fs::read_to_string(dir.join("layout.txt"))?;
    let layout = GridLayout::parse(&layout_text)?;

    let mut checks = Vec::new();

    let dataset = read_dataset(&dir.join("dataset.jsonl"));
    record(
        &mut checks,
        "dataset-schema",
        dataset.as_ref().map(|d| format!("{} trajectories", d.n_traj())).map_err(clone_err),
    );
    if let Ok(d) = &dataset {
        record(
            &mut checks,
            "dataset-replay",
            replay_check(d, &layout).map(|_| "all transitions replay".into()),
        );
    }

    let embeddings = read_embeddings_csv(&dir.join("embeddings.csv"));
    record(
        &mut checks,
        "embeddings-shape",
        embeddings
            .as_ref()
            .map_err(clone_err)
            .and_then(|embs| {
                if let Ok(d) = &dataset {
                    if embs.len() != d.n_traj() {
                        return Err(Error::Validation(format!(
                            "{} embeddings for {} trajectories",
                            embs.len(),
                            d.n_traj()
                        )));
                    }
                }
                for (i, e) in embs.iter().enumerate() {
                    if e.traj_id != i {
                        return Err(Error::Validation(format!("embedding {i} out of order")));
                    }
                    if e.vector.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Validation(format!("embedding {i} not finite")));
                    }
                }
                Ok(format!("{} embeddings", embs.len()))
            }),
    );

    let clusters = read_clusters_csv(&dir.join("clusters.csv"), &dir.join("centroids.csv"));
    record(
        &mut checks,
        "clusters-partition",
        clusters.as_ref().map_err(clone_err).and_then(|cs| {
            cs.check_partition()?;
            if let Ok(embs) = &embeddings {
                if cs.assignments.len() != embs.len() {
                    return Err(Error::Validation(format!(
                        "{} assignments for {} embeddings",
                        cs.assignments.len(),
                        embs.len()
                    )));
                }
            }
            Ok(format!("{} clusters over {} trajectories", cs.n_clusters(), cs.assignments.len()))
        }),
    );

    let data_embeddings = read_data_embeddings_csv(&dir.join("data_embeddings.csv"));
    record(
        &mut checks,
        "simplex-rows",
        data_embeddings.as_ref().map_err(clone_err).and_then(|rows| {
            for row in rows {
                row.check_simplex()?;
            }
            if !rows.iter().any(|r| r.source == EmbeddingSource::Original) {
                return Err(Error::Validation("no original data embedding row".into()));
            }
            if let Ok(cs) = &clusters {
                for c in 0..cs.n_clusters() {
                    if !rows.iter().any(|r| r.source == EmbeddingSource::Complement(c)) {
                        return Err(Error::Validation(format!(
                            "missing complementary embedding for cluster {c}"
                        )));
                    }
                }
            }
            Ok(format!("{} simplex rows", rows.len()))
        }),
    );

    record(
        &mut checks,
        "policy-greedy",
        (|| {
            let n_clusters = clusters.as_ref().map(|c| c.n_clusters()).unwrap_or(0);
            let mut paths = vec![dir.join("policies/orig.json")];
            for c in 0..n_clusters {
                paths.push(dir.join(format!("policies/cluster_{c:02}.json")));
            }
            for p in &paths {
                let pol = TabularPolicy::load(p)?;
                pol.check_greedy()?;
                if pol.gamma != config.gamma {
                    return Err(Error::Validation(format!(
                        "{} trained with gamma {} but config says {}",
                        p.display(),
                        pol.gamma,
                        config.gamma
                    )));
                }
            }
            Ok(format!("{} policies greedy-consistent", n_clusters + 1))
        })(),
    );

    record(
        &mut checks,
        "attribution-consistency",
        read_attributions_json(&dir.join("attributions.json"))
            .and_then(|file| {
                for res in &file.results {
                    let max_d = res.distances.iter().map(|&(_, d)| d).fold(0.0, f64::max);
                    let expected: Vec<usize> = res
                        .distances
                        .iter()
                        .filter(|&&(_, d)| d == max_d)
                        .map(|&(c, _)| c)
                        .collect();
                    if res.candidates != expected {
                        return Err(Error::Validation(format!(
                            "state {:?}: candidate set is not the argmax set",
                            res.state
                        )));
                    }
                    match res.c_final {
                        Some(c) if max_d == 0.0 => {
                            return Err(Error::Validation(format!(
                                "state {:?}: attributed to {c} with zero max distance",
                                res.state
                            )))
                        }
                        Some(c) if !res.candidates.contains(&c) => {
                            return Err(Error::Validation(format!(
                                "state {:?}: c_final {c} outside the candidate set",
                                res.state
                            )))
                        }
                        None if max_d > 0.0 => {
                            return Err(Error::Validation(format!(
                                "state {:?}: no attribution despite a deviating policy",
                                res.state
                            )))
                        }
                        _ => {}
                    }
                    if let (Some(c), Ok(cs)) = (res.c_final, &clusters) {
                        let members = cs.members(c);
                        if res.exemplars.iter().any(|id| !members.contains(id)) {
                            return Err(Error::Validation(format!(
                                "state {:?}: exemplar outside cluster {c}",
                                res.state
                            )));
                        }
                    }
                }
                Ok(format!("{} attribution records", file.results.len()))
            }),
    );

    record(
        &mut checks,
        "metrics-shape",
        read_metrics_csv(&dir.join("metrics.csv")).and_then(|m| {
            let n_clusters = clusters.as_ref().map(|c| c.n_clusters()).unwrap_or(0);
            if m.rows.len() != n_clusters + 1 {
                return Err(Error::Validation(format!(
                    "{} metric rows for {} clusters",
                    m.rows.len(),
                    n_clusters
                )));
            }
            let mut freq_sum = 0.0;
            let mut ones = 0;
            for (label, cols) in &m.rows[1..] {
                let w = cols[3]
                    .ok_or_else(|| Error::Validation(format!("row {label}: missing w_dist")))?;
                if !(0.0..=1.0).contains(&w) {
                    return Err(Error::Validation(format!("row {label}: w_dist {w} outside [0,1]")));
                }
                if w == 1.0 {
                    ones += 1;
                }
                let f = cols[4]
                    .ok_or_else(|| Error::Validation(format!("row {label}: missing frequency")))?;
                if f < 0.0 {
                    return Err(Error::Validation(format!("row {label}: negative frequency")));
                }
                freq_sum += f;
            }
            if freq_sum > 1.0 + 1e-9 {
                return Err(Error::Validation(format!("frequencies sum to {freq_sum}")));
            }
            if (freq_sum + m.none_fraction - 1.0).abs() > 1e-9 {
                return Err(Error::Validation(format!(
                    "frequencies ({freq_sum}) plus none mass ({}) do not cover 1",
                    m.none_fraction
                )));
            }
            if ones != 1 && !m.degenerate_w {
                return Err(Error::Validation(format!(
                    "{ones} normalized distances equal 1.0 (expected exactly one)"
                )));
            }
            Ok(format!("{} rows", m.rows.len()))
        }),
    );

    Ok(ValidationReport { checks })
}

fn clone_err(e: &Error) -> Error {
    Error::Validation(e.to_string())
}
