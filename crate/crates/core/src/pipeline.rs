//! Seeded, cached pipeline orchestration.
//!
//! Each stage's output is written next to a fingerprint file derived from
//! the stage parameters and its upstream fingerprints. A rerun with an
//! unchanged config loads every cached artifact and only rewrites the final
//! report; changing a parameter invalidates exactly the downstream stages.

use std::path::{Path, PathBuf};

use crate::artifacts::{
    read_attributions_json, read_clusters_csv, read_data_embeddings_csv, read_embeddings_csv,
    write_attributions_json, write_clusters_csv, write_data_embeddings_csv, write_embeddings_csv,
    AttributionFile,
};
use crate::attribution::{
    metrics_report, train_explanation_suite, Attributor, ExplanationEntry, ExplanationSuite,
    MetricsReport, RlConfig,
};
use crate::clustering::{xmeans, ClusterSet};
use crate::data::{generate_offline_dataset, read_dataset, write_dataset, BehaviorMix, Dataset};
use crate::embedding::{DataEmbedding, EmbeddingSource, SimplexMetric};
use crate::encoder::{train_encoder, Encoder, EncoderConfig, TokenVocab, TrajectoryEmbedding};
use crate::error::{Error, Result};
use crate::gridworld::{GridLayout, GridState, DEFAULT_LAYOUT};
use crate::hashing::sha256_hex;
use crate::offline_rl::{start_distribution, TabularPolicy};

/// How the data-embedding normalizing factor is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MPolicy {
    /// Use the full dataset's trajectory count, shared by every embedding.
    Auto,
    Value(f64),
}

impl MPolicy {
    pub fn resolve(self, n_traj: usize) -> f64 {
        match self {
            MPolicy::Auto => n_traj as f64,
            MPolicy::Value(v) => v,
        }
    }
}

/// Which states the attribution and metrics stages evaluate.
#[derive(Debug, Clone, PartialEq)]
pub enum EvalStates {
    /// Every reachable non-terminal state.
    All,
    /// An explicit `(row, col)` list.
    List(Vec<(usize, usize)>),
}

impl EvalStates {
    fn canonical(&self) -> String {
        match self {
            EvalStates::All => "all".into(),
            EvalStates::List(states) => states
                .iter()
                .map(|(r, c)| format!("{r},{c}"))
                .collect::<Vec<_>>()
                .join(";"),
        }
    }

    pub fn resolve(&self, layout: &GridLayout) -> Result<Vec<GridState>> {
        match self {
            EvalStates::All => Ok(layout.reachable_nonterminal_states()),
            EvalStates::List(states) => states
                .iter()
                .map(|&(r, c)| {
                    let s = layout.state_at(r, c)?;
                    if s.terminal {
                        return Err(Error::Config(format!("eval state ({r}, {c}) is terminal")));
                    }
                    Ok(s)
                })
                .collect(),
        }
    }
}

/// Full run configuration; every stochastic stage carries an explicit seed.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Layout file; the built-in 7x7 default when absent.
    pub layout_path: Option<PathBuf>,
    pub n_traj: usize,
    pub max_len: usize,
    pub mix: BehaviorMix,
    pub data_seed: u64,
    pub d_model: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub grad_clip: f64,
    pub encoder_seed: u64,
    pub k_min: usize,
    /// Upper cluster bound; `min(16, n_traj / 3)` when absent.
    pub k_max: Option<usize>,
    pub cluster_seed: u64,
    pub m_policy: MPolicy,
    pub t_soft: f64,
    pub simplex_metric: SimplexMetric,
    pub gamma: f64,
    pub tol: f64,
    pub r_pess: f64,
    pub eval_states: EvalStates,
    pub top_n: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            layout_path: None,
            n_traj: 60,
            max_len: 30,
            mix: BehaviorMix::default(),
            data_seed: 11,
            d_model: 64,
            learning_rate: 1e-2,
            epochs: 50,
            grad_clip: 5.0,
            encoder_seed: 3,
            k_min: 2,
            k_max: None,
            cluster_seed: 13,
            m_policy: MPolicy::Auto,
            t_soft: 1.0,
            simplex_metric: SimplexMetric::Wasserstein,
            gamma: 0.95,
            tol: 1e-8,
            r_pess: -1.0,
            eval_states: EvalStates::All,
            top_n: 3,
        }
    }
}

impl RunConfig {
    /// Parses the flat `key = value` format; `#` starts a comment. Unknown
    /// keys are rejected.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| Error::Config(format!("line {}: bad {what} {value:?}", i + 1));
            match key {
                "layout_path" => cfg.layout_path = Some(PathBuf::from(value)),
                "n_traj" => cfg.n_traj = value.parse().map_err(|_| bad("count"))?,
                "max_len" => cfg.max_len = value.parse().map_err(|_| bad("count"))?,
                "mix_uniform" => cfg.mix.uniform = value.parse().map_err(|_| bad("weight"))?,
                "mix_greedy" => cfg.mix.greedy = value.parse().map_err(|_| bad("weight"))?,
                "greedy_eps" => cfg.mix.greedy_eps = value.parse().map_err(|_| bad("epsilon"))?,
                "mix_noisy" => cfg.mix.noisy = value.parse().map_err(|_| bad("weight"))?,
                "data_seed" => cfg.data_seed = value.parse().map_err(|_| bad("seed"))?,
                "d_model" => cfg.d_model = value.parse().map_err(|_| bad("dimension"))?,
                "learning_rate" => cfg.learning_rate = value.parse().map_err(|_| bad("rate"))?,
                "epochs" => cfg.epochs = value.parse().map_err(|_| bad("count"))?,
                "grad_clip" => cfg.grad_clip = value.parse().map_err(|_| bad("norm"))?,
                "encoder_seed" => cfg.encoder_seed = value.parse().map_err(|_| bad("seed"))?,
                "k_min" => cfg.k_min = value.parse().map_err(|_| bad("count"))?,
                "k_max" => cfg.k_max = Some(value.parse().map_err(|_| bad("count"))?),
                "cluster_seed" => cfg.cluster_seed = value.parse().map_err(|_| bad("seed"))?,
                "m_policy" => {
                    cfg.m_policy = if value == "auto" {
                        MPolicy::Auto
                    } else {
                        MPolicy::Value(value.parse().map_err(|_| bad("normalizing factor"))?)
                    }
                }
                "t_soft" => cfg.t_soft = value.parse().map_err(|_| bad("temperature"))?,
                "simplex_metric" => cfg.simplex_metric = value.parse()?,
                "gamma" => cfg.gamma = value.parse().map_err(|_| bad("discount"))?,
                "tol" => cfg.tol = value.parse().map_err(|_| bad("tolerance"))?,
                "r_pess" => cfg.r_pess = value.parse().map_err(|_| bad("reward"))?,
                "eval_states" => {
                    cfg.eval_states = if value == "all" {
                        EvalStates::All
                    } else {
                        let mut states = Vec::new();
                        for part in value.split(';') {
                            let (r, c) = part
                                .split_once(',')
                                .ok_or_else(|| bad("state list (row,col;row,col)"))?;
                            states.push((
                                r.trim().parse().map_err(|_| bad("row"))?,
                                c.trim().parse().map_err(|_| bad("col"))?,
                            ));
                        }
                        EvalStates::List(states)
                    }
                }
                "top_n" => cfg.top_n = value.parse().map_err(|_| bad("count"))?,
                other => {
                    return Err(Error::Config(format!("line {}: unknown key {other:?}", i + 1)))
                }
            }
        }
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        RunConfig::parse(&std::fs::read_to_string(path)?)
    }

    pub fn check(&self) -> Result<()> {
        if self.n_traj == 0 {
            return Err(Error::Config("n_traj must be at least 1".into()));
        }
        if self.top_n == 0 {
            return Err(Error::Config("top_n must be at least 1".into()));
        }
        if self.k_min == 0 || self.k_min > self.k_max_effective() {
            return Err(Error::Config(format!(
                "cluster bounds [{}, {}] are invalid",
                self.k_min,
                self.k_max_effective()
            )));
        }
        if !(self.t_soft > 0.0) {
            return Err(Error::Config("t_soft must be positive".into()));
        }
        Ok(())
    }

    /// `min(16, n_traj / 3)` unless pinned, never below `k_min`.
    pub fn k_max_effective(&self) -> usize {
        self.k_max.unwrap_or_else(|| 16.min(self.n_traj / 3).max(self.k_min))
    }

    pub fn rl_config(&self) -> RlConfig {
        RlConfig { gamma: self.gamma, tol: self.tol, r_pess: self.r_pess }
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            d_model: self.d_model,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            grad_clip: self.grad_clip,
            seed: self.encoder_seed,
        }
    }

    /// Replaces every stage seed with values derived from `seed`.
    pub fn override_seeds(&mut self, seed: u64) {
        self.data_seed = seed;
        self.encoder_seed = seed.wrapping_add(1);
        self.cluster_seed = seed.wrapping_add(2);
    }

    /// Canonical fingerprint of the whole run configuration.
    pub fn fingerprint(&self) -> String {
        sha256_hex(&["run-config", &self.to_config_string()])
    }

    /// The flat key=value document for this config, as written to the run
    /// directory.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        if let Some(p) = &self.layout_path {
            s.push_str(&format!("layout_path = {}\n", p.display()));
        }
        s.push_str(&format!("n_traj = {}\n", self.n_traj));
        s.push_str(&format!("max_len = {}\n", self.max_len));
        s.push_str(&format!("mix_uniform = {}\n", self.mix.uniform));
        s.push_str(&format!("mix_greedy = {}\n", self.mix.greedy));
        s.push_str(&format!("greedy_eps = {}\n", self.mix.greedy_eps));
        s.push_str(&format!("mix_noisy = {}\n", self.mix.noisy));
        s.push_str(&format!("data_seed = {}\n", self.data_seed));
        s.push_str(&format!("d_model = {}\n", self.d_model));
        s.push_str(&format!("learning_rate = {}\n", self.learning_rate));
        s.push_str(&format!("epochs = {}\n", self.epochs));
        s.push_str(&format!("grad_clip = {}\n", self.grad_clip));
        s.push_str(&format!("encoder_seed = {}\n", self.encoder_seed));
        s.push_str(&format!("k_min = {}\n", self.k_min));
        s.push_str(&format!("k_max = {}\n", self.k_max_effective()));
        s.push_str(&format!("cluster_seed = {}\n", self.cluster_seed));
        match self.m_policy {
            MPolicy::Auto => s.push_str("m_policy = auto\n"),
            MPolicy::Value(v) => s.push_str(&format!("m_policy = {v}\n")),
        }
        s.push_str(&format!("t_soft = {}\n", self.t_soft));
        s.push_str(&format!("simplex_metric = {}\n", self.simplex_metric));
        s.push_str(&format!("gamma = {}\n", self.gamma));
        s.push_str(&format!("tol = {}\n", self.tol));
        s.push_str(&format!("r_pess = {}\n", self.r_pess));
        s.push_str(&format!("eval_states = {}\n", self.eval_states.canonical()));
        s.push_str(&format!("top_n = {}\n", self.top_n));
        s
    }

    /// Loads the configured layout (or the built-in default) as
    /// `(text, parsed)`.
    pub fn load_layout(&self) -> Result<(String, GridLayout)> {
        let text = match &self.layout_path {
            Some(p) => std::fs::read_to_string(p)?,
            None => DEFAULT_LAYOUT.to_string(),
        };
        let layout = GridLayout::parse(&text)?;
        Ok((text, layout))
    }
}

/// Execution record for one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageStatus {
    pub name: &'static str,
    pub cached: bool,
}

/// Pipeline prefixes runnable as individual subcommands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    GenData,
    TrainEncoder,
    Encode,
    Cluster,
    Embed,
    TrainPolicies,
    Attribute,
    Report,
}

/// Everything a completed (or prefix) run produced, in memory.
pub struct RunOutput {
    pub stages: Vec<StageStatus>,
    pub layout: GridLayout,
    pub dataset: Option<Dataset>,
    pub clusters: Option<ClusterSet>,
    pub metrics: Option<MetricsReport>,
    pub n_clusters: Option<usize>,
}

fn cached_stage<T>(
    dir: &Path,
    fp_file: &str,
    expected_fp: &str,
    artifacts: &[&Path],
    load: impl FnOnce() -> Result<T>,
    compute_and_write: impl FnOnce() -> Result<T>,
) -> Result<(T, bool)> {
    let fp_path = dir.join(fp_file);
    let fresh = artifacts.iter().all(|p| p.exists())
        && std::fs::read_to_string(&fp_path).map(|s| s == expected_fp).unwrap_or(false);
    if fresh {
        if let Ok(v) = load() {
            return Ok((v, true));
        }
    }
    let v = compute_and_write()?;
    std::fs::write(&fp_path, expected_fp)?;
    Ok((v, false))
}

fn fmt_f(v: f64) -> String {
    format!("{v:e}")
}

/// Runs the pipeline through `upto`, reusing every stage whose fingerprint
/// matches. Artifacts land in `dir`.
pub fn run_pipeline(cfg: &RunConfig, dir: &Path, upto: Stage) -> Result<RunOutput> {
    cfg.check()?;
    std::fs::create_dir_all(dir)?;
    let (layout_text, layout) = cfg.load_layout().map_err(|e| e.in_stage("gen-data"))?;
    std::fs::write(dir.join("layout.txt"), &layout_text)?;
    std::fs::write(dir.join("config.resolved"), cfg.to_config_string())?;

    let mut stages = Vec::new();
    let mut out = RunOutput {
        stages: Vec::new(),
        layout: layout.clone(),
        dataset: None,
        clusters: None,
        metrics: None,
        n_clusters: None,
    };

    // --- gen-data ---------------------------------------------------------
    let dataset_fp = sha256_hex(&[
        "dataset",
        &layout_text,
        &cfg.n_traj.to_string(),
        &cfg.max_len.to_string(),
        &fmt_f(cfg.mix.uniform),
        &fmt_f(cfg.mix.greedy),
        &fmt_f(cfg.mix.greedy_eps),
        &fmt_f(cfg.mix.noisy),
        &cfg.data_seed.to_string(),
    ]);
    let dataset_path = dir.join("dataset.jsonl");
    let (dataset, cached) = cached_stage(
        dir,
        "dataset.fp",
        &dataset_fp,
        &[dataset_path.as_path()],
        || read_dataset(&dataset_path),
        || {
            let d = generate_offline_dataset(
                &layout,
                &layout_text,
                &cfg.mix,
                cfg.n_traj,
                cfg.max_len,
                cfg.data_seed,
            )?;
            write_dataset(&d, &dataset_path)?;
            Ok(d)
        },
    )
    .map_err(|e| e.in_stage("gen-data"))?;
    stages.push(StageStatus { name: "gen-data", cached });
    out.dataset = Some(dataset.clone());
    if upto == Stage::GenData {
        out.stages = stages;
        return Ok(out);
    }

    // --- train-encoder ----------------------------------------------------
    let encoder_fp = sha256_hex(&[
        "encoder",
        &dataset_fp,
        &cfg.d_model.to_string(),
        &fmt_f(cfg.learning_rate),
        &cfg.epochs.to_string(),
        &fmt_f(cfg.grad_clip),
        &cfg.encoder_seed.to_string(),
    ]);
    let encoder_path = dir.join("encoder.ckpt");
    let (encoder, cached) = cached_stage(
        dir,
        "encoder.fp",
        &encoder_fp,
        &[encoder_path.as_path()],
        || Encoder::load(&encoder_path),
        || {
            let enc = train_encoder(&dataset, TokenVocab::for_grid(&layout), &cfg.encoder_config())?;
            enc.save(&encoder_path)?;
            Ok(enc)
        },
    )
    .map_err(|e| e.in_stage("train-encoder"))?;
    stages.push(StageStatus { name: "train-encoder", cached });
    if upto == Stage::TrainEncoder {
        out.stages = stages;
        return Ok(out);
    }

    // --- encode -----------------------------------------------------------
    let embeddings_fp = sha256_hex(&["embeddings", &encoder_fp]);
    let embeddings_path = dir.join("embeddings.csv");
    let (embeddings, cached): (Vec<TrajectoryEmbedding>, bool) = cached_stage(
        dir,
        "embeddings.fp",
        &embeddings_fp,
        &[embeddings_path.as_path()],
        || read_embeddings_csv(&embeddings_path),
        || {
            let embs = encoder.encode_all(&dataset)?;
            write_embeddings_csv(&embeddings_path, &embs)?;
            Ok(embs)
        },
    )
    .map_err(|e| e.in_stage("encode"))?;
    stages.push(StageStatus { name: "encode", cached });
    if upto == Stage::Encode {
        out.stages = stages;
        return Ok(out);
    }

    // --- cluster ----------------------------------------------------------
    let k_max = cfg.k_max_effective();
    let clusters_fp = sha256_hex(&[
        "clusters",
        &embeddings_fp,
        &cfg.k_min.to_string(),
        &k_max.to_string(),
        &cfg.cluster_seed.to_string(),
    ]);
    let clusters_path = dir.join("clusters.csv");
    let centroids_path = dir.join("centroids.csv");
    let (clusters, cached) = cached_stage(
        dir,
        "clusters.fp",
        &clusters_fp,
        &[clusters_path.as_path(), centroids_path.as_path()],
        || read_clusters_csv(&clusters_path, &centroids_path),
        || {
            let points: Vec<Vec<f64>> = embeddings.iter().map(|e| e.vector.clone()).collect();
            let cs = xmeans(&points, cfg.k_min, k_max, cfg.cluster_seed)?;
            write_clusters_csv(&clusters_path, &centroids_path, &cs)?;
            Ok(cs)
        },
    )
    .map_err(|e| e.in_stage("cluster"))?;
    stages.push(StageStatus { name: "cluster", cached });
    out.n_clusters = Some(clusters.n_clusters());
    out.clusters = Some(clusters.clone());
    if upto == Stage::Cluster {
        out.stages = stages;
        return Ok(out);
    }

    // --- embed (data embeddings) -------------------------------------------
    let m = cfg.m_policy.resolve(dataset.n_traj());
    let data_emb_fp = sha256_hex(&[
        "data-embeddings",
        &embeddings_fp,
        &clusters_fp,
        &fmt_f(m),
        &fmt_f(cfg.t_soft),
    ]);
    let data_emb_path = dir.join("data_embeddings.csv");
    let (data_embeddings, cached) = cached_stage(
        dir,
        "data_embeddings.fp",
        &data_emb_fp,
        &[data_emb_path.as_path()],
        || read_data_embeddings_csv(&data_emb_path),
        || {
            let mut all = vec![crate::embedding::data_embedding(
                embeddings.iter(),
                m,
                cfg.t_soft,
                EmbeddingSource::Original,
            )?];
            for cluster in 0..clusters.n_clusters() {
                let kept: Vec<&TrajectoryEmbedding> = embeddings
                    .iter()
                    .filter(|e| clusters.assignments[e.traj_id] != cluster)
                    .collect();
                all.push(crate::embedding::data_embedding(
                    kept.into_iter(),
                    m,
                    cfg.t_soft,
                    EmbeddingSource::Complement(cluster),
                )?);
            }
            write_data_embeddings_csv(&data_emb_path, &all)?;
            Ok(all)
        },
    )
    .map_err(|e| e.in_stage("embed"))?;
    stages.push(StageStatus { name: "embed", cached });
    if upto == Stage::Embed {
        out.stages = stages;
        return Ok(out);
    }

    // --- train-policies -----------------------------------------------------
    let policies_fp = sha256_hex(&[
        "policies",
        &dataset_fp,
        &clusters_fp,
        &fmt_f(cfg.gamma),
        &fmt_f(cfg.tol),
        &fmt_f(cfg.r_pess),
    ]);
    let policies_dir = dir.join("policies");
    let policy_paths: Vec<PathBuf> = std::iter::once(policies_dir.join("orig.json"))
        .chain((0..clusters.n_clusters()).map(|c| policies_dir.join(format!("cluster_{c:02}.json"))))
        .collect();
    let rl = cfg.rl_config();
    let (suite, cached) = cached_stage(
        dir,
        "policies.fp",
        &policies_fp,
        &policy_paths.iter().map(|p| p.as_path()).collect::<Vec<_>>(),
        || {
            load_suite_from_artifacts(
                &policies_dir,
                &data_embeddings,
                clusters.n_clusters(),
                &rl,
            )
        },
        || {
            let suite = train_explanation_suite(
                &dataset,
                &layout,
                &clusters,
                &embeddings,
                &rl,
                m,
                cfg.t_soft,
            )?;
            std::fs::create_dir_all(&policies_dir)?;
            suite.original_policy.save(&policies_dir.join("orig.json"))?;
            for e in &suite.entries {
                e.policy.save(&policies_dir.join(format!("cluster_{:02}.json", e.cluster_id)))?;
            }
            Ok(suite)
        },
    )
    .map_err(|e| e.in_stage("train-policies"))?;
    stages.push(StageStatus { name: "train-policies", cached });
    if upto == Stage::TrainPolicies {
        out.stages = stages;
        return Ok(out);
    }

    // --- attribute ----------------------------------------------------------
    let attrib_fp = sha256_hex(&[
        "attributions",
        &policies_fp,
        &data_emb_fp,
        &cfg.eval_states.canonical(),
        &cfg.top_n.to_string(),
        &cfg.simplex_metric.to_string(),
    ]);
    let attrib_path = dir.join("attributions.json");
    let attributor = Attributor {
        layout: &layout,
        suite: &suite,
        dataset: &dataset,
        clusters: &clusters,
        metric: cfg.simplex_metric,
        top_n: cfg.top_n,
    };
    let eval_states = cfg.eval_states.resolve(&layout)?;
    let (_attributions, cached) = cached_stage(
        dir,
        "attributions.fp",
        &attrib_fp,
        &[attrib_path.as_path()],
        || read_attributions_json(&attrib_path),
        || {
            let results = eval_states
                .iter()
                .map(|s| attributor.attribute(s))
                .collect::<Result<Vec<_>>>()?;
            let file = AttributionFile { metric: cfg.simplex_metric, results };
            write_attributions_json(&attrib_path, &file)?;
            Ok(file)
        },
    )
    .map_err(|e| e.in_stage("attribute"))?;
    stages.push(StageStatus { name: "attribute", cached });
    if upto == Stage::Attribute {
        out.stages = stages;
        return Ok(out);
    }

    // --- report (always recomputed) ------------------------------------------
    let report = (|| -> Result<MetricsReport> {
        let report = metrics_report(&attributor, &eval_states, &start_distribution(&layout))?;
        std::fs::write(dir.join("metrics.csv"), crate::artifacts::metrics_to_csv(&report))?;
        Ok(report)
    })()
    .map_err(|e| e.in_stage("report"))?;
    stages.push(StageStatus { name: "report", cached: false });

    out.metrics = Some(report);
    out.stages = stages;
    Ok(out)
}

/// Rebuilds the explanation suite from a run directory's policy files and
/// data-embedding rows.
pub fn load_suite_from_artifacts(
    policies_dir: &Path,
    data_embeddings: &[DataEmbedding],
    n_clusters: usize,
    rl: &RlConfig,
) -> Result<ExplanationSuite> {
    let original_policy = TabularPolicy::load(&policies_dir.join("orig.json"))?;
    let original_embedding = data_embeddings
        .iter()
        .find(|e| e.source == EmbeddingSource::Original)
        .cloned()
        .ok_or_else(|| Error::Validation("missing original data embedding".into()))?;
    let fingerprint = rl.fingerprint();
    let mut entries = Vec::with_capacity(n_clusters);
    for cluster in 0..n_clusters {
        let policy = TabularPolicy::load(&policies_dir.join(format!("cluster_{cluster:02}.json")))?;
        let embedding = data_embeddings
            .iter()
            .find(|e| e.source == EmbeddingSource::Complement(cluster))
            .cloned()
            .ok_or_else(|| {
                Error::Validation(format!("missing complementary embedding for cluster {cluster}"))
            })?;
        entries.push(ExplanationEntry {
            cluster_id: cluster,
            policy,
            embedding,
            fingerprint: fingerprint.clone(),
        });
    }
    ExplanationSuite::assemble(original_policy, original_embedding, entries, fingerprint)
}

/// Loads enough of a completed run to attribute arbitrary states.
pub struct LoadedRun {
    pub config: RunConfig,
    pub layout: GridLayout,
    pub dataset: Dataset,
    pub clusters: ClusterSet,
    pub suite: ExplanationSuite,
}

impl LoadedRun {
    pub fn open(dir: &Path) -> Result<LoadedRun> {
        let config = RunConfig::load(&dir.join("config.resolved"))
            .map_err(|e| Error::Validation(format!("unreadable run config: {e}")))?;
        let layout_text = std::fs::read_to_string(dir.join("layout.txt"))?;
        let layout = GridLayout::parse(&layout_text)?;
        let dataset = read_dataset(&dir.join("dataset.jsonl"))?;
        let clusters = read_clusters_csv(&dir.join("clusters.csv"), &dir.join("centroids.csv"))?;
        let data_embeddings = read_data_embeddings_csv(&dir.join("data_embeddings.csv"))?;
        let suite = load_suite_from_artifacts(
            &dir.join("policies"),
            &data_embeddings,
            clusters.n_clusters(),
            &config.rl_config(),
        )?;
        Ok(LoadedRun { config, layout, dataset, clusters, suite })
    }

    pub fn attributor(&self) -> Attributor<'_> {
        Attributor {
            layout: &self.layout,
            suite: &self.suite,
            dataset: &self.dataset,
            clusters: &self.clusters,
            metric: self.config.simplex_metric,
            top_n: self.config.top_n,
        }
    }
}
