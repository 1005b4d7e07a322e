//! Attribution of policy decisions to trajectory clusters.
//!
//! For each cluster, an explanation policy is trained on the complementary
//! dataset (everything except that cluster) under training conditions
//! identical to the original policy. At a query state, the clusters whose
//! explanation policies deviate most from the original action form the
//! candidate set; among candidates, the cluster whose complementary data
//! embedding sits closest to the full-data embedding wins the attribution.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::ClusterSet;
use crate::data::{Dataset, Trajectory};
use crate::embedding::{
    data_embedding, normalize_distances, DataEmbedding, EmbeddingSource, SimplexMetric,
};
use crate::encoder::TrajectoryEmbedding;
use crate::error::{Error, Result};
use crate::gridworld::{GridLayout, GridState};
use crate::hashing::sha256_hex;
use crate::offline_rl::{fit_model, initial_state_value, value_iteration, TabularPolicy};

/// Offline-RL training condition shared by the original and every
/// explanation policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RlConfig {
    pub gamma: f64,
    pub tol: f64,
    pub r_pess: f64,
}

impl Default for RlConfig {
    fn default() -> Self {
        RlConfig { gamma: 0.95, tol: 1e-8, r_pess: -1.0 }
    }
}

impl RlConfig {
    /// Canonical fingerprint; every policy in a suite must carry the same one.
    pub fn fingerprint(&self) -> String {
        sha256_hex(&[
            "rl-config",
            &format!("{:e}", self.gamma),
            &format!("{:e}", self.tol),
            &format!("{:e}", self.r_pess),
        ])
    }
}

/// For each cluster, the dataset containing every trajectory outside it.
/// Local ids are re-densified; original ids land in `meta.source_ids`.
pub fn complementary_datasets(data: &Dataset, cs: &ClusterSet) -> Result<Vec<(usize, Dataset)>> {
    if cs.assignments.len() != data.n_traj() {
        return Err(Error::Contract(format!(
            "cluster assignments cover {} trajectories, dataset has {}",
            cs.assignments.len(),
            data.n_traj()
        )));
    }
    cs.check_partition()?;
    let mut out = Vec::with_capacity(cs.n_clusters());
    for cluster in 0..cs.n_clusters() {
        let mut trajectories = Vec::new();
        let mut source_ids = Vec::new();
        for t in &data.trajectories {
            if cs.assignments[t.id] != cluster {
                source_ids.push(t.id);
                trajectories.push(Trajectory { id: trajectories.len(), steps: t.steps.clone() });
            }
        }
        if trajectories.is_empty() {
            return Err(Error::Contract(format!(
                "cluster {cluster} covers the whole dataset; its complement is empty"
            )));
        }
        let mut meta = data.meta.clone();
        meta.n_traj = trajectories.len();
        meta.source_ids = Some(source_ids);
        out.push((cluster, Dataset { trajectories, meta }));
    }
    Ok(out)
}

/// One cluster's explanation policy and complementary data embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplanationEntry {
    pub cluster_id: usize,
    pub policy: TabularPolicy,
    pub embedding: DataEmbedding,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplanationSuite {
    pub original_policy: TabularPolicy,
    pub original_embedding: DataEmbedding,
    pub entries: Vec<ExplanationEntry>,
    pub fingerprint: String,
}

impl ExplanationSuite {
    /// Joins independently trained parts, rejecting any training-condition
    /// mismatch.
    pub fn assemble(
        original_policy: TabularPolicy,
        original_embedding: DataEmbedding,
        entries: Vec<ExplanationEntry>,
        fingerprint: String,
    ) -> Result<ExplanationSuite> {
        for e in &entries {
            if e.fingerprint != fingerprint {
                return Err(Error::Contract(format!(
                    "cluster {} was trained under a different config fingerprint",
                    e.cluster_id
                )));
            }
        }
        Ok(ExplanationSuite { original_policy, original_embedding, entries, fingerprint })
    }

    pub fn n_clusters(&self) -> usize {
        self.entries.len()
    }
}

/// Trains the original policy on the full data and one explanation policy
/// per complementary dataset, all under the same `rl` config, and computes
/// the matching data embeddings with a fixed `m` and `t_soft`.
pub fn train_explanation_suite(
    data: &Dataset,
    layout: &GridLayout,
    cs: &ClusterSet,
    embeddings: &[TrajectoryEmbedding],
    rl: &RlConfig,
    m: f64,
    t_soft: f64,
) -> Result<ExplanationSuite> {
    if embeddings.len() != data.n_traj() {
        return Err(Error::Contract(format!(
            "{} embeddings for {} trajectories",
            embeddings.len(),
            data.n_traj()
        )));
    }
    for (i, e) in embeddings.iter().enumerate() {
        if e.traj_id != i {
            return Err(Error::Contract(format!(
                "embedding order broken: position {i} holds trajectory {}",
                e.traj_id
            )));
        }
    }

    let fingerprint = rl.fingerprint();
    let original_policy = value_iteration(&fit_model(data, layout, rl.r_pess)?, rl.gamma, rl.tol)?;
    let original_embedding =
        data_embedding(embeddings.iter(), m, t_soft, EmbeddingSource::Original)?;

    let complements = complementary_datasets(data, cs)?;
    let entries: Vec<ExplanationEntry> = complements
        .par_iter()
        .map(|(cluster, complement)| -> Result<ExplanationEntry> {
            let policy =
                value_iteration(&fit_model(complement, layout, rl.r_pess)?, rl.gamma, rl.tol)?;
            let kept = complement.meta.source_ids.as_ref().expect("complement carries source ids");
            let embedding = data_embedding(
                kept.iter().map(|&id| &embeddings[id]),
                m,
                t_soft,
                EmbeddingSource::Complement(*cluster),
            )?;
            Ok(ExplanationEntry {
                cluster_id: *cluster,
                policy,
                embedding,
                fingerprint: fingerprint.clone(),
            })
        })
        .collect::<Result<_>>()?;

    ExplanationSuite::assemble(original_policy, original_embedding, entries, fingerprint)
}

/// An action in either a discrete or a continuous action space.
#[derive(Debug, Clone, PartialEq)]
pub enum ActionValue {
    Discrete(usize),
    Continuous(Vec<f64>),
}

/// Disagreement indicator for discrete actions, squared Euclidean distance
/// for continuous ones.
pub fn action_distance(a_orig: &ActionValue, a_j: &ActionValue) -> Result<f64> {
    match (a_orig, a_j) {
        (ActionValue::Discrete(a), ActionValue::Discrete(b)) => {
            Ok(if a == b { 0.0 } else { 1.0 })
        }
        (ActionValue::Continuous(a), ActionValue::Continuous(b)) => {
            if a.len() != b.len() {
                return Err(Error::Dimension { expected: a.len(), got: b.len() });
            }
            Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
        }
        _ => Err(Error::Contract("action space mismatch".into())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionResult {
    pub state: (usize, usize),
    pub a_orig: usize,
    /// Action distance per cluster id.
    pub distances: Vec<(usize, f64)>,
    /// Candidate set: the argmax clusters of the action distances.
    pub candidates: Vec<usize>,
    /// Data-embedding distance per candidate cluster.
    pub data_distances: Vec<(usize, f64)>,
    /// Attributed cluster; `None` when no explanation policy deviates.
    pub c_final: Option<usize>,
    /// Up to `top_n` exemplar trajectory ids from the attributed cluster.
    pub exemplars: Vec<usize>,
}

/// Everything needed to attribute states and report metrics.
pub struct Attributor<'a> {
    pub layout: &'a GridLayout,
    pub suite: &'a ExplanationSuite,
    pub dataset: &'a Dataset,
    pub clusters: &'a ClusterSet,
    pub metric: SimplexMetric,
    pub top_n: usize,
}

impl Attributor<'_> {
    /// Runs the candidate-argmax / embedding-argmin attribution at one state.
    pub fn attribute(&self, state: &GridState) -> Result<AttributionResult> {
        if state.terminal {
            return Err(Error::Contract(format!(
                "cannot attribute terminal state ({}, {})",
                state.row, state.col
            )));
        }
        let s = self.layout.cell_index(state.row, state.col);
        let a_orig = self.suite.original_policy.action(s)?;

        let mut distances = Vec::with_capacity(self.suite.n_clusters());
        for e in &self.suite.entries {
            let a_j = e.policy.action(s)?;
            let d = action_distance(&ActionValue::Discrete(a_orig), &ActionValue::Discrete(a_j))?;
            distances.push((e.cluster_id, d));
        }
        let max_d = distances.iter().map(|&(_, d)| d).fold(0.0, f64::max);
        let candidates: Vec<usize> =
            distances.iter().filter(|&&(_, d)| d == max_d).map(|&(c, _)| c).collect();

        if max_d == 0.0 {
            return Ok(AttributionResult {
                state: (state.row, state.col),
                a_orig,
                distances,
                candidates,
                data_distances: Vec::new(),
                c_final: None,
                exemplars: Vec::new(),
            });
        }

        let mut data_distances = Vec::with_capacity(candidates.len());
        for &c in &candidates {
            let entry = &self.suite.entries[c];
            let w = self.metric.distance(&self.suite.original_embedding, &entry.embedding)?;
            data_distances.push((c, w));
        }
        // argmin with ties to the lowest cluster id
        let c_final = data_distances
            .iter()
            .fold(None, |best: Option<(usize, f64)>, &(c, w)| match best {
                Some((_, bw)) if bw <= w => best,
                _ => Some((c, w)),
            })
            .map(|(c, _)| c)
            .expect("candidates are non-empty when max_d > 0");

        let exemplars = select_top_trajectories(
            &self.clusters.members(c_final),
            state,
            a_orig,
            self.dataset,
            self.layout,
            self.top_n,
        );
        Ok(AttributionResult {
            state: (state.row, state.col),
            a_orig,
            distances,
            candidates,
            data_distances,
            c_final: Some(c_final),
            exemplars,
        })
    }
}

/// Context-matching rank for the exemplar trajectories of a cluster:
/// trajectories through the exact `(state, action)` pair first, then any
/// visit to the state, then by the smallest Manhattan distance any of their
/// cells gets to the state. Ties fall back to the trajectory id.
pub fn select_top_trajectories(
    members: &[usize],
    state: &GridState,
    a_orig: usize,
    data: &Dataset,
    layout: &GridLayout,
    n: usize,
) -> Vec<usize> {
    let target = layout.cell_index(state.row, state.col);
    let mut ranked: Vec<(u8, usize, usize)> = members
        .iter()
        .map(|&id| {
            let traj = &data.trajectories[id];
            let exact = traj.steps.iter().any(|st| st.obs == target && st.action == a_orig);
            let visits = traj.steps.iter().any(|st| st.obs == target);
            let tier = if exact { 0 } else if visits { 1 } else { 2 };
            let manhattan = if tier == 2 {
                traj.steps
                    .iter()
                    .map(|st| {
                        let (r, c) = (st.obs / layout.width(), st.obs % layout.width());
                        r.abs_diff(state.row) + c.abs_diff(state.col)
                    })
                    .min()
                    .unwrap_or(usize::MAX)
            } else {
                0
            };
            (tier, manhattan, id)
        })
        .collect();
    ranked.sort_unstable();
    ranked.into_iter().take(n).map(|(_, _, id)| id).collect()
}

/// One row of the per-policy comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    /// "orig" or the cluster id.
    pub label: String,
    /// Initial state value estimate.
    pub ev_s0: f64,
    /// Mean |Q_orig(s, pi_orig(s)) - Q_orig(s, pi_j(s))| over eval states.
    pub mean_abs_dq: Option<f64>,
    /// Mean action disagreement over eval states.
    pub contrast: Option<f64>,
    /// Normalized data-embedding distance.
    pub w_dist: Option<f64>,
    /// Fraction of eval states attributed to this cluster.
    pub freq: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
    /// Fraction of eval states where no explanation policy deviated.
    pub none_fraction: f64,
    /// Set when every raw data-embedding distance was zero.
    pub degenerate_w: bool,
}

/// Evaluates the comparison table over the given states: initial state
/// value, local action-value difference, action contrast, normalized
/// embedding distance, and attribution frequency per cluster.
pub fn metrics_report(
    att: &Attributor<'_>,
    eval_states: &[GridState],
    start_dist: &[f64],
) -> Result<MetricsReport> {
    if eval_states.is_empty() {
        return Err(Error::Contract("eval state set is empty".into()));
    }
    let suite = att.suite;
    let orig = &suite.original_policy;
    let n_eval = eval_states.len() as f64;

    let raw_w: Vec<(usize, f64)> = suite
        .entries
        .iter()
        .map(|e| {
            att.metric
                .distance(&suite.original_embedding, &e.embedding)
                .map(|w| (e.cluster_id, w))
        })
        .collect::<Result<_>>()?;
    let normalized = normalize_distances(&raw_w)?;

    let mut attribution_counts = vec![0usize; suite.n_clusters()];
    let mut none_count = 0usize;
    let mut dq_sums = vec![0.0; suite.n_clusters()];
    let mut contrast_sums = vec![0.0; suite.n_clusters()];
    for state in eval_states {
        let s = att.layout.cell_index(state.row, state.col);
        let a_orig = orig.action(s)?;
        for (k, e) in suite.entries.iter().enumerate() {
            let a_j = e.policy.action(s)?;
            let dq = (orig.q[s][a_orig] - orig.q[s][a_j]).abs();
            dq_sums[k] += dq;
            if a_j != a_orig {
                contrast_sums[k] += 1.0;
            }
        }
        match att.attribute(state)?.c_final {
            Some(c) => attribution_counts[c] += 1,
            None => none_count += 1,
        }
    }

    let mut rows = Vec::with_capacity(suite.n_clusters() + 1);
    rows.push(MetricsRow {
        label: "orig".into(),
        ev_s0: initial_state_value(orig, start_dist)?,
        mean_abs_dq: None,
        contrast: None,
        w_dist: None,
        freq: None,
    });
    for (k, e) in suite.entries.iter().enumerate() {
        rows.push(MetricsRow {
            label: e.cluster_id.to_string(),
            ev_s0: initial_state_value(&e.policy, start_dist)?,
            mean_abs_dq: Some(dq_sums[k] / n_eval),
            contrast: Some(contrast_sums[k] / n_eval),
            w_dist: Some(normalized.values[k].1),
            freq: Some(attribution_counts[e.cluster_id] as f64 / n_eval),
        });
    }
    Ok(MetricsReport {
        rows,
        none_fraction: none_count as f64 / n_eval,
        degenerate_w: normalized.degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::kmeans;
    use crate::data::{generate_offline_dataset, BehaviorMix, DatasetMeta, Step};
    use crate::encoder::{train_encoder, EncoderConfig, TokenVocab};
    use crate::gridworld::DEFAULT_LAYOUT;
    use crate::offline_rl::start_distribution;

    fn toy_clusters(n_traj: usize, n_clusters: usize) -> ClusterSet {
        // round-robin assignment; centroids are placeholders
        ClusterSet {
            assignments: (0..n_traj).map(|i| i % n_clusters).collect(),
            centroids: vec![vec![0.0]; n_clusters],
        }
    }

    fn fake_embeddings(n: usize, dim: usize) -> Vec<TrajectoryEmbedding> {
        (0..n)
            .map(|i| TrajectoryEmbedding {
                traj_id: i,
                vector: (0..dim).map(|j| ((i * 31 + j * 7) % 13) as f64 / 13.0).collect(),
            })
            .collect()
    }

    #[test]
    fn complement_sizes_are_set_differences() {
        let layout = GridLayout::parse(DEFAULT_LAYOUT).unwrap();
        let data =
            generate_offline_dataset(&layout, DEFAULT_LAYOUT, &BehaviorMix::default(), 60, 30, 7)
                .unwrap();
        let cs = toy_clusters(60, 10);
        let comps = complementary_datasets(&data, &cs).unwrap();
        assert_eq!(comps.len(), 10);
        for (cluster, comp) in &comps {
            assert_eq!(comp.n_traj(), 60 - cs.members(*cluster).len());
            assert_eq!(comp.n_traj(), 54);
            // partition identity: members plus complement recover all ids
            let mut ids: Vec<usize> = comp.meta.source_ids.clone().unwrap();
            ids.extend(cs.members(*cluster));
            ids.sort_unstable();
            assert_eq!(ids, (0..60).collect::<Vec<_>>());
        }
    }

    #[test]
    fn singleton_cluster_complement() {
        let layout = GridLayout::parse(DEFAULT_LAYOUT).unwrap();
        let data =
            generate_offline_dataset(&layout, DEFAULT_LAYOUT, &BehaviorMix::default(), 5, 30, 1)
                .unwrap();
        let cs = ClusterSet {
            assignments: vec![0, 1, 1, 1, 1],
            centroids: vec![vec![0.0], vec![0.0]],
        };
        let comps = complementary_datasets(&data, &cs).unwrap();
        assert_eq!(comps[0].1.n_traj(), 4);
        assert_eq!(comps[1].1.n_traj(), 1);
    }

    #[test]
    fn whole_dataset_cluster_is_an_error() {
        let layout = GridLayout::parse(DEFAULT_LAYOUT).unwrap();
        let data =
            generate_offline_dataset(&layout, DEFAULT_LAYOUT, &BehaviorMix::default(), 3, 30, 1)
                .unwrap();
        let cs = ClusterSet { assignments: vec![0, 0, 0], centroids: vec![vec![0.0]] };
        assert!(complementary_datasets(&data, &cs).is_err());
    }

    #[test]
    fn suite_has_one_entry_per_cluster() {
        let layout = GridLayout::parse(DEFAULT_LAYOUT).unwrap();
        let data =
            generate_offline_dataset(&layout, DEFAULT_LAYOUT, &BehaviorMix::default(), 60, 30, 7)
                .unwrap();
        let cs = toy_clusters(60, 10);
        let embs = fake_embeddings(60, 8);
        let suite = train_explanation_suite(
            &data,
            &layout,
            &cs,
            &embs,
            &RlConfig::default(),
            60.0,
            1.0,
        )
        .unwrap();
        assert_eq!(suite.n_clusters(), 10);
        for (i, e) in suite.entries.iter().enumerate() {
            assert_eq!(e.cluster_id, i);
            e.embedding.check_simplex().unwrap();
            assert_eq!(e.fingerprint, suite.fingerprint);
        }
    }

    #[test]
    fn suite_training_is_deterministic() {
        let layout = GridLayout::parse(DEFAULT_LAYOUT).unwrap();
        let data =
            generate_offline_dataset(&layout, DEFAULT_LAYOUT, &BehaviorMix::default(), 30, 30, 3)
                .unwrap();
        let cs = toy_clusters(30, 4);
        let embs = fake_embeddings(30, 8);
        let rl = RlConfig::default();
        let a = train_explanation_suite(&data, &layout, &cs, &embs, &rl, 30.0, 1.0).unwrap();
        let b = train_explanation_suite(&data, &layout, &cs, &embs, &rl, 30.0, 1.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn assemble_rejects_fingerprint_mismatch() {
        let layout = GridLayout::parse(DEFAULT_LAYOUT).unwrap();
        let data =
            generate_offline_dataset(&layout, DEFAULT_LAYOUT, &BehaviorMix::default(), 12, 30, 3)
                .unwrap();
        let cs = toy_clusters(12, 3);
        let embs = fake_embeddings(12, 8);
        let rl = RlConfig::default();
        let suite = train_explanation_suite(&data, &layout, &cs, &embs, &rl, 12.0, 1.0).unwrap();
        let mut entries = suite.entries.clone();
        entries[1].fingerprint = "tampered".into();
        let err = ExplanationSuite::assemble(
            suite.original_policy.clone(),
            suite.original_embedding.clone(),
            entries,
            suite.fingerprint.clone(),
        );
        assert!(err.is_err());
    }

    #[test]
    fn removing_an_isolated_cluster_preserves_far_decisions() {
        // two corridors separated by a wall row; trajectories never cross
        let text = "S.G\n###\nS.G";
        let layout = GridLayout::parse(text).unwrap();
        let top = vec![
            Step { obs: 0, action: 3, reward: -0.1 },
            Step { obs: 1, action: 3, reward: 1.0 },
        ];
        let bottom = vec![
            Step { obs: 6, action: 3, reward: -0.1 },
            Step { obs: 7, action: 3, reward: 1.0 },
        ];
        let trajectories: Vec<Trajectory> = [top.clone(), top, bottom.clone(), bottom]
            .into_iter()
            .enumerate()
            .map(|(id, steps)| Trajectory { id, steps })
            .collect();
        let data = Dataset {
            trajectories,
            meta: DatasetMeta {
                n_traj: 4,
                max_len: 30,
                seed: 0,
                mix: BehaviorMix::default(),
                layout_hash: "fixture".into(),
                source_ids: None,
            },
        };
        let cs = ClusterSet {
            assignments: vec![0, 0, 1, 1],
            centroids: vec![vec![0.0], vec![1.0]],
        };
        let embs = fake_embeddings(4, 4);
        let suite =
            train_explanation_suite(&data, &layout, &cs, &embs, &RlConfig::default(), 4.0, 1.0)
                .unwrap();
        // removing the bottom cluster (1) leaves the top corridor's data
        // untouched, so the policies agree on the top cells
        for s in [0usize, 1] {
            assert_eq!(
                suite.entries[1].policy.action(s).unwrap(),
                suite.original_policy.action(s).unwrap(),
                "cell {s}"
            );
        }
    }

    #[test]
    fn action_distance_cases() {
        use ActionValue::*;
        assert_eq!(action_distance(&Discrete(2), &Discrete(2)).unwrap(), 0.0);
        assert_eq!(action_distance(&Discrete(2), &Discrete(3)).unwrap(), 1.0);
        let d = action_distance(&Continuous(vec![0.5, -0.5]), &Continuous(vec![0.0, 0.0])).unwrap();
        assert!((d - 0.5).abs() < 1e-15);
        assert!(action_distance(&Discrete(0), &Continuous(vec![0.0])).is_err());
        assert!(
            action_distance(&Continuous(vec![0.0]), &Continuous(vec![0.0, 1.0])).is_err()
        );
    }

    /// Minimal policy over `n_states` that plays `default_action` everywhere
    /// except the overrides.
    fn fixed_policy(n_states: usize, default_action: usize, overrides: &[(usize, usize)]) -> TabularPolicy {
        let mut actions = vec![Some(default_action); n_states];
        for &(s, a) in overrides {
            actions[s] = Some(a);
        }
        TabularPolicy {
            gamma: 0.95,
            actions,
            v: vec![0.0; n_states],
            q: vec![vec![0.0; 4]; n_states],
            terminal: vec![false; n_states],
        }
    }

    fn simplex(probs: &[f64], source: EmbeddingSource) -> DataEmbedding {
        DataEmbedding { probs: probs.to_vec(), source }
    }

    struct Fixture {
        layout: GridLayout,
        dataset: Dataset,
        clusters: ClusterSet,
    }

    fn three_cluster_fixture() -> Fixture {
        let layout = GridLayout::parse("S...G").unwrap();
        let steps = vec![Step { obs: 0, action: 3, reward: -0.1 }];
        let trajectories: Vec<Trajectory> =
            (0..3).map(|id| Trajectory { id, steps: steps.clone() }).collect();
        let dataset = Dataset {
            trajectories,
            meta: DatasetMeta {
                n_traj: 3,
                max_len: 30,
                seed: 0,
                mix: BehaviorMix::default(),
                layout_hash: "fixture".into(),
                source_ids: None,
            },
        };
        let clusters = ClusterSet {
            assignments: vec![0, 1, 2],
            centroids: vec![vec![0.0]; 3],
        };
        Fixture { layout, dataset, clusters }
    }

    #[test]
    fn all_agreeing_policies_attribute_to_none() {
        let fx = three_cluster_fixture();
        let suite = ExplanationSuite {
            original_policy: fixed_policy(6, 3, &[]),
            original_embedding: simplex(&[1.0, 0.0, 0.0], EmbeddingSource::Original),
            entries: (0..3)
                .map(|c| ExplanationEntry {
                    cluster_id: c,
                    policy: fixed_policy(6, 3, &[]),
                    embedding: simplex(&[1.0, 0.0, 0.0], EmbeddingSource::Complement(c)),
                    fingerprint: "f".into(),
                })
                .collect(),
            fingerprint: "f".into(),
        };
        let att = Attributor {
            layout: &fx.layout,
            suite: &suite,
            dataset: &fx.dataset,
            clusters: &fx.clusters,
            metric: SimplexMetric::Wasserstein,
            top_n: 3,
        };
        let state = fx.layout.state_at(0, 1).unwrap();
        let res = att.attribute(&state).unwrap();
        assert_eq!(res.c_final, None);
        assert_eq!(res.candidates, vec![0, 1, 2]);
        assert!(res.distances.iter().all(|&(_, d)| d == 0.0));
    }

    #[test]
    fn single_disagreeing_cluster_wins_regardless_of_distance() {
        let fx = three_cluster_fixture();
        let suite = ExplanationSuite {
            original_policy: fixed_policy(6, 3, &[]),
            original_embedding: simplex(&[1.0, 0.0, 0.0], EmbeddingSource::Original),
            entries: (0..3)
                .map(|c| ExplanationEntry {
                    cluster_id: c,
                    // cluster 1 deviates at cell 1
                    policy: fixed_policy(6, 3, if c == 1 { &[(1, 0)] } else { &[] }),
                    // make the deviating cluster the *farthest* one
                    embedding: simplex(
                        if c == 1 { &[0.0, 0.0, 1.0] } else { &[1.0, 0.0, 0.0] },
                        EmbeddingSource::Complement(c),
                    ),
                    fingerprint: "f".into(),
                })
                .collect(),
            fingerprint: "f".into(),
        };
        let att = Attributor {
            layout: &fx.layout,
            suite: &suite,
            dataset: &fx.dataset,
            clusters: &fx.clusters,
            metric: SimplexMetric::Wasserstein,
            top_n: 3,
        };
        let state = fx.layout.state_at(0, 1).unwrap();
        let res = att.attribute(&state).unwrap();
        assert_eq!(res.candidates, vec![1]);
        assert_eq!(res.c_final, Some(1));
    }

    #[test]
    fn wasserstein_ordering_picks_the_nearer_candidate() {
        let fx = three_cluster_fixture();
        // clusters 0 and 1 disagree with the original; 0 is nearer in
        // embedding space (W = 0.2 vs 0.7 by the 1-D CDF form)
        let suite = ExplanationSuite {
            original_policy: fixed_policy(6, 3, &[]),
            original_embedding: simplex(&[1.0, 0.0, 0.0], EmbeddingSource::Original),
            entries: vec![
                ExplanationEntry {
                    cluster_id: 0,
                    policy: fixed_policy(6, 3, &[(1, 0)]),
                    embedding: simplex(&[0.8, 0.2, 0.0], EmbeddingSource::Complement(0)),
                    fingerprint: "f".into(),
                },
                ExplanationEntry {
                    cluster_id: 1,
                    policy: fixed_policy(6, 3, &[(1, 1)]),
                    embedding: simplex(&[0.3, 0.7, 0.0], EmbeddingSource::Complement(1)),
                    fingerprint: "f".into(),
                },
                ExplanationEntry {
                    cluster_id: 2,
                    policy: fixed_policy(6, 3, &[]),
                    embedding: simplex(&[0.0, 0.0, 1.0], EmbeddingSource::Complement(2)),
                    fingerprint: "f".into(),
                },
            ],
            fingerprint: "f".into(),
        };
        let att = Attributor {
            layout: &fx.layout,
            suite: &suite,
            dataset: &fx.dataset,
            clusters: &fx.clusters,
            metric: SimplexMetric::Wasserstein,
            top_n: 3,
        };
        let state = fx.layout.state_at(0, 1).unwrap();
        let res = att.attribute(&state).unwrap();
        assert_eq!(res.candidates, vec![0, 1]);
        let w: Vec<f64> = res.data_distances.iter().map(|&(_, w)| w).collect();
        assert!((w[0] - 0.2).abs() < 1e-12 && (w[1] - 0.7).abs() < 1e-12);
        assert_eq!(res.c_final, Some(0));
        // terminal query is a contract violation
        let terminal = fx.layout.state_at(0, 4).unwrap();
        assert!(att.attribute(&terminal).is_err());
    }

    #[test]
    fn exemplar_ranking_tiers() {
        let layout = GridLayout::parse("S....\n....G").unwrap();
        let state = layout.state_at(0, 2).unwrap();
        let target = layout.cell_index(0, 2);
        let mk = |id: usize, steps: Vec<Step>| Trajectory { id, steps };
        let data = Dataset {
            trajectories: vec![
                // id 0: far away (manhattan 2 at best)
                mk(0, vec![Step { obs: layout.cell_index(1, 0), action: 1, reward: -0.1 }]),
                // id 1: visits the state with a different action
                mk(1, vec![Step { obs: target, action: 0, reward: -0.1 }]),
                // id 2: exact (state, action) match
                mk(2, vec![Step { obs: target, action: 3, reward: -0.1 }]),
                // id 3: nearer than id 0 (manhattan 1)
                mk(3, vec![Step { obs: layout.cell_index(0, 1), action: 1, reward: -0.1 }]),
            ],
            meta: DatasetMeta {
                n_traj: 4,
                max_len: 30,
                seed: 0,
                mix: BehaviorMix::default(),
                layout_hash: "fixture".into(),
                source_ids: None,
            },
        };
        let ranked = select_top_trajectories(&[0, 1, 2, 3], &state, 3, &data, &layout, 4);
        assert_eq!(ranked, vec![2, 1, 3, 0]);
        // top-3 of a larger member set stays deterministic
        let top3 = select_top_trajectories(&[0, 1, 2, 3], &state, 3, &data, &layout, 3);
        assert_eq!(top3, vec![2, 1, 3]);
        let top3b = select_top_trajectories(&[0, 1, 2, 3], &state, 3, &data, &layout, 3);
        assert_eq!(top3, top3b);
    }

    fn real_attributor_fixture() -> (GridLayout, Dataset, ClusterSet, ExplanationSuite) {
        let layout = GridLayout::parse(DEFAULT_LAYOUT).unwrap();
        let data =
            generate_offline_dataset(&layout, DEFAULT_LAYOUT, &BehaviorMix::default(), 24, 30, 5)
                .unwrap();
        let cfg = EncoderConfig { d_model: 16, epochs: 6, ..EncoderConfig::default() };
        let enc = train_encoder(&data, TokenVocab::for_grid(&layout), &cfg).unwrap();
        let embs = enc.encode_all(&data).unwrap();
        let points: Vec<Vec<f64>> = embs.iter().map(|e| e.vector.clone()).collect();
        let cs = kmeans(&points, 4, 0).unwrap();
        let suite =
            train_explanation_suite(&data, &layout, &cs, &embs, &RlConfig::default(), 24.0, 1.0)
                .unwrap();
        (layout, data, cs, suite)
    }

    #[test]
    fn metrics_rows_match_table_shape() {
        let (layout, data, cs, suite) = real_attributor_fixture();
        let att = Attributor {
            layout: &layout,
            suite: &suite,
            dataset: &data,
            clusters: &cs,
            metric: SimplexMetric::Wasserstein,
            top_n: 3,
        };
        let eval_states = layout.reachable_nonterminal_states();
        let report = metrics_report(&att, &eval_states, &start_distribution(&layout)).unwrap();
        assert_eq!(report.rows.len(), suite.n_clusters() + 1);
        assert_eq!(report.rows[0].label, "orig");
        assert!(report.rows[0].mean_abs_dq.is_none());
        let freq_sum: f64 = report.rows[1..].iter().map(|r| r.freq.unwrap()).sum();
        assert!(freq_sum <= 1.0 + 1e-12);
        assert!((freq_sum + report.none_fraction - 1.0).abs() < 1e-9);
        for row in &report.rows[1..] {
            let w = row.w_dist.unwrap();
            assert!((0.0..=1.0).contains(&w));
            // per-state coupling: zero contrast forces zero action-value gap
            if row.contrast.unwrap() == 0.0 {
                assert_eq!(row.mean_abs_dq.unwrap(), 0.0);
            }
        }
        if !report.degenerate_w {
            let ones = report.rows[1..].iter().filter(|r| r.w_dist == Some(1.0)).count();
            assert_eq!(ones, 1);
        }
    }

    #[test]
    fn self_comparison_rows_are_zero() {
        let (layout, data, cs, mut suite) = real_attributor_fixture();
        // overwrite one explanation policy with the original
        suite.entries[2].policy = suite.original_policy.clone();
        let att = Attributor {
            layout: &layout,
            suite: &suite,
            dataset: &data,
            clusters: &cs,
            metric: SimplexMetric::Wasserstein,
            top_n: 3,
        };
        let eval_states = layout.reachable_nonterminal_states();
        let report = metrics_report(&att, &eval_states, &start_distribution(&layout)).unwrap();
        let row = &report.rows[3];
        assert_eq!(row.label, "2");
        assert_eq!(row.mean_abs_dq, Some(0.0));
        assert_eq!(row.contrast, Some(0.0));
    }

    #[test]
    fn attribution_matches_leave_cluster_out_brute_force() {
        // small fixture: recompute everything directly and compare c_final
        let layout = GridLayout::parse(DEFAULT_LAYOUT).unwrap();
        let data =
            generate_offline_dataset(&layout, DEFAULT_LAYOUT, &BehaviorMix::default(), 12, 30, 11)
                .unwrap();
        let embs = fake_embeddings(12, 6);
        let cs = toy_clusters(12, 4);
        let rl = RlConfig::default();
        let (m, t_soft) = (12.0, 1.0);
        let suite = train_explanation_suite(&data, &layout, &cs, &embs, &rl, m, t_soft).unwrap();
        let att = Attributor {
            layout: &layout,
            suite: &suite,
            dataset: &data,
            clusters: &cs,
            metric: SimplexMetric::Wasserstein,
            top_n: 3,
        };

        // brute force, written independently of the suite plumbing
        let d_orig =
            data_embedding(embs.iter(), m, t_soft, EmbeddingSource::Original).unwrap();
        let pi_orig =
            value_iteration(&fit_model(&data, &layout, rl.r_pess).unwrap(), rl.gamma, rl.tol)
                .unwrap();
        for state in layout.reachable_nonterminal_states() {
            let s = layout.cell_index(state.row, state.col);
            let a_orig = pi_orig.action(s).unwrap();
            let mut dists = Vec::new();
            let mut w = Vec::new();
            for cluster in 0..4 {
                let keep: Vec<usize> =
                    (0..12).filter(|&i| cs.assignments[i] != cluster).collect();
                let sub = Dataset {
                    trajectories: keep
                        .iter()
                        .enumerate()
                        .map(|(new_id, &i)| Trajectory {
                            id: new_id,
                            steps: data.trajectories[i].steps.clone(),
                        })
                        .collect(),
                    meta: DatasetMeta { n_traj: keep.len(), ..data.meta.clone() },
                };
                let pi = value_iteration(
                    &fit_model(&sub, &layout, rl.r_pess).unwrap(),
                    rl.gamma,
                    rl.tol,
                )
                .unwrap();
                dists.push(if pi.action(s).unwrap() == a_orig { 0.0 } else { 1.0 });
                let d_j = data_embedding(
                    keep.iter().map(|&i| &embs[i]),
                    m,
                    t_soft,
                    EmbeddingSource::Complement(cluster),
                )
                .unwrap();
                w.push(
                    crate::embedding::wasserstein_simplex(&d_orig.probs, &d_j.probs).unwrap(),
                );
            }
            let max_d = dists.iter().cloned().fold(0.0, f64::max);
            let expected = if max_d == 0.0 {
                None
            } else {
                (0..4)
                    .filter(|&c| dists[c] == max_d)
                    .min_by(|&a, &b| w[a].partial_cmp(&w[b]).unwrap().then(a.cmp(&b)))
            };
            let got = att.attribute(&state).unwrap().c_final;
            assert_eq!(got, expected, "state ({}, {})", state.row, state.col);
        }
    }
}
