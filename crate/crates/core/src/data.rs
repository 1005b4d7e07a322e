//! Offline trajectory dataset: generation from behavior policies,
//! JSON-lines serialization, and replay consistency checks.
//!
//! File format: the first line is a metadata header, every following line is
//! one trajectory `{"id", "obs": [int], "act": [int], "rew": [float]}` with
//! observations stored as flattened cell indices `row * width + col`.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::{GridAction, GridLayout, GridState};

/// One environment step as stored in the offline data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub obs: usize,
    pub action: usize,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: usize,
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Mixture of behavior policies used to produce the offline data.
/// Weights must sum to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorMix {
    /// Weight of the uniform-random policy.
    pub uniform: f64,
    /// Weight of the epsilon-greedy shortest-path policy.
    pub greedy: f64,
    /// Epsilon for the shortest-path policy.
    pub greedy_eps: f64,
    /// Weight of the noisy goal-seeking policy (Manhattan-greedy, ignores walls).
    pub noisy: f64,
}

impl Default for BehaviorMix {
    fn default() -> Self {
        BehaviorMix { uniform: 0.4, greedy: 0.4, greedy_eps: 0.2, noisy: 0.2 }
    }
}

impl BehaviorMix {
    fn validate(&self) -> Result<()> {
        let total = self.uniform + self.greedy + self.noisy;
        if self.uniform < 0.0 || self.greedy < 0.0 || self.noisy < 0.0 {
            return Err(Error::Config("behavior mix weights must be non-negative".into()));
        }
        if total <= 0.0 {
            return Err(Error::Config("behavior mix is empty".into()));
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("behavior mix weights sum to {total}, expected 1")));
        }
        if !(0.0..=1.0).contains(&self.greedy_eps) {
            return Err(Error::Config("greedy_eps must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub n_traj: usize,
    pub max_len: usize,
    pub seed: u64,
    pub mix: BehaviorMix,
    /// Hex SHA-256 of the layout text the data was rolled out on.
    pub layout_hash: String,
    /// For complementary datasets: original trajectory id per local id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_ids: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn n_traj(&self) -> usize {
        self.trajectories.len()
    }

    /// Checks id density and basic invariants.
    pub fn check(&self) -> Result<()> {
        if self.trajectories.is_empty() {
            return Err(Error::Contract("dataset must contain at least one trajectory".into()));
        }
        for (i, t) in self.trajectories.iter().enumerate() {
            if t.id != i {
                return Err(Error::Contract(format!(
                    "trajectory ids must be dense: found id {} at position {i}",
                    t.id
                )));
            }
            if t.steps.is_empty() {
                return Err(Error::Contract(format!("trajectory {i} is empty")));
            }
            if t.steps.iter().any(|s| !s.reward.is_finite()) {
                return Err(Error::Contract(format!("trajectory {i} has a non-finite reward")));
            }
        }
        Ok(())
    }
}

/// Hex SHA-256 of a layout document; stored in dataset metadata.
pub fn layout_hash(layout_text: &str) -> String {
    use sha2::Digest;
    let mut h = sha2::Sha256::new();
    h.update(layout_text.as_bytes());
    format!("{:x}", h.finalize())
}

fn pick_action_uniform(rng: &mut ChaCha8Rng) -> GridAction {
    GridAction::ALL[rng.gen_range(0..4)]
}

/// Greedy step along BFS shortest paths to the nearest goal (lava and walls
/// are routed around); ties broken by lowest action id. Falls back to a
/// random action when no goal is reachable.
fn pick_action_shortest_path(
    layout: &GridLayout,
    dist: &[usize],
    s: &GridState,
    eps: f64,
    rng: &mut ChaCha8Rng,
) -> GridAction {
    if rng.gen::<f64>() < eps {
        return pick_action_uniform(rng);
    }
    let mut best: Option<(usize, GridAction)> = None;
    for a in GridAction::ALL {
        let (next, _, _) = layout.step(s, a).expect("rollout states are non-terminal");
        let d = if next.terminal && layout.cell(next.row, next.col).is_terminal() {
            // entering a goal ends the episode; score it as distance 0
            match layout.cell(next.row, next.col) {
                crate::gridworld::CellKind::Goal => 0,
                _ => usize::MAX,
            }
        } else {
            dist[layout.cell_index(next.row, next.col)]
        };
        if best.map_or(true, |(bd, _)| d < bd) {
            best = Some((d, a));
        }
    }
    match best {
        Some((d, a)) if d != usize::MAX => a,
        _ => pick_action_uniform(rng),
    }
}

/// Manhattan-greedy toward the nearest goal, ignoring walls, with 30% noise.
fn pick_action_noisy_goal(layout: &GridLayout, s: &GridState, rng: &mut ChaCha8Rng) -> GridAction {
    if rng.gen::<f64>() < 0.3 {
        return pick_action_uniform(rng);
    }
    let (gr, gc) = match layout.nearest_goal_manhattan(s.row, s.col) {
        Some(g) => g,
        None => return pick_action_uniform(rng),
    };
    let mut best = GridAction::Up;
    let mut best_d = usize::MAX;
    for a in GridAction::ALL {
        let (dr, dc) = a.delta();
        let nr = s.row as isize + dr;
        let nc = s.col as isize + dc;
        if nr < 0 || nc < 0 || nr >= layout.height() as isize || nc >= layout.width() as isize {
            continue;
        }
        let d = (nr as usize).abs_diff(gr) + (nc as usize).abs_diff(gc);
        if d < best_d {
            best_d = d;
            best = a;
        }
    }
    best
}

#[derive(Clone, Copy)]
enum Behavior {
    Uniform,
    Greedy,
    Noisy,
}

/// Rolls out `n_traj` seeded trajectories from uniformly sampled start
/// states, truncating at `max_len` or termination. One RNG stream; the
/// output is fully determined by the arguments.
pub fn generate_offline_dataset(
    layout: &GridLayout,
    layout_text: &str,
    mix: &BehaviorMix,
    n_traj: usize,
    max_len: usize,
    seed: u64,
) -> Result<Dataset> {
    mix.validate()?;
    if n_traj == 0 {
        return Err(Error::Config("n_traj must be at least 1".into()));
    }
    if max_len == 0 {
        return Err(Error::Config("max_len must be at least 1".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = layout.goal_distances();
    let starts = layout.start_states();
    let mut trajectories = Vec::with_capacity(n_traj);

    for id in 0..n_traj {
        let u = rng.gen::<f64>();
        let behavior = if u < mix.uniform {
            Behavior::Uniform
        } else if u < mix.uniform + mix.greedy {
            Behavior::Greedy
        } else {
            Behavior::Noisy
        };

        let (sr, sc) = starts[rng.gen_range(0..starts.len())];
        let mut state = layout.state_at(sr, sc)?;
        let mut steps = Vec::new();
        while steps.len() < max_len {
            let action = match behavior {
                Behavior::Uniform => pick_action_uniform(&mut rng),
                Behavior::Greedy => {
                    pick_action_shortest_path(layout, &dist, &state, mix.greedy_eps, &mut rng)
                }
                Behavior::Noisy => pick_action_noisy_goal(layout, &state, &mut rng),
            };
            let (next, reward, done) = layout.step(&state, action)?;
            steps.push(Step {
                obs: layout.cell_index(state.row, state.col),
                action: action.id(),
                reward,
            });
            state = next;
            if done {
                break;
            }
        }
        trajectories.push(Trajectory { id, steps });
    }

    let meta = DatasetMeta {
        n_traj,
        max_len,
        seed,
        mix: mix.clone(),
        layout_hash: layout_hash(layout_text),
        source_ids: None,
    };
    let ds = Dataset { trajectories, meta };
    ds.check()?;
    Ok(ds)
}

#[derive(Serialize, Deserialize)]
struct TrajRecord {
    id: usize,
    obs: Vec<usize>,
    act: Vec<usize>,
    rew: Vec<f64>,
}

pub fn write_dataset(d: &Dataset, path: &Path) -> Result<()> {
    d.check()?;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{}", serde_json::to_string(&d.meta)?)?;
    for t in &d.trajectories {
        let rec = TrajRecord {
            id: t.id,
            obs: t.steps.iter().map(|s| s.obs).collect(),
            act: t.steps.iter().map(|s| s.action).collect(),
            rew: t.steps.iter().map(|s| s.reward).collect(),
        };
        writeln!(out, "{}", serde_json::to_string(&rec)?)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut lines = file.lines().enumerate();

    let meta: DatasetMeta = match lines.next() {
        Some((_, line)) => {
            let line = line?;
            serde_json::from_str(&line).map_err(|e| Error::Schema {
                line: 1,
                msg: format!("bad metadata header: {e}"),
            })?
        }
        None => {
            return Err(Error::Schema { line: 1, msg: "empty dataset file".into() });
        }
    };

    let mut trajectories = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (lineno, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let n = lineno + 1; // 1-based
        let rec: TrajRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Schema { line: n, msg: e.to_string() })?;
        if rec.obs.len() != rec.act.len() || rec.obs.len() != rec.rew.len() {
            return Err(Error::Schema {
                line: n,
                msg: format!(
                    "field lengths disagree: obs={}, act={}, rew={}",
                    rec.obs.len(),
                    rec.act.len(),
                    rec.rew.len()
                ),
            });
        }
        if rec.obs.is_empty() {
            return Err(Error::Schema { line: n, msg: "empty trajectory".into() });
        }
        if rec.rew.iter().any(|r| !r.is_finite()) {
            return Err(Error::Schema { line: n, msg: "non-finite reward".into() });
        }
        if !seen.insert(rec.id) {
            return Err(Error::Schema { line: n, msg: format!("duplicate trajectory id {}", rec.id) });
        }
        let steps = rec
            .obs
            .iter()
            .zip(&rec.act)
            .zip(&rec.rew)
            .map(|((&obs, &action), &reward)| Step { obs, action, reward })
            .collect();
        trajectories.push(Trajectory { id: rec.id, steps });
    }

    if trajectories.is_empty() {
        return Err(Error::Schema { line: 1, msg: "dataset has no trajectories (n_traj >= 1)".into() });
    }
    if trajectories.len() != meta.n_traj {
        return Err(Error::Schema {
            line: 1,
            msg: format!(
                "header claims {} trajectories, file has {}",
                meta.n_traj,
                trajectories.len()
            ),
        });
    }
    let ds = Dataset { trajectories, meta };
    ds.check().map_err(|e| Error::Schema { line: 1, msg: e.to_string() })?;
    Ok(ds)
}

/// Re-simulates every stored transition against the environment and fails
/// if any reward or successor observation disagrees.
pub fn replay_check(d: &Dataset, layout: &GridLayout) -> Result<()> {
    let width = layout.width();
    for t in &d.trajectories {
        for (k, step) in t.steps.iter().enumerate() {
            let state = layout.state_from_index(step.obs)?;
            if state.terminal {
                return Err(Error::Contract(format!(
                    "trajectory {} step {k} starts from a terminal cell",
                    t.id
                )));
            }
            let action = GridAction::from_id(step.action)?;
            let (next, reward, _) = layout.step(&state, action)?;
            if reward != step.reward {
                return Err(Error::Contract(format!(
                    "trajectory {} step {k}: stored reward {} but environment yields {}",
                    t.id, step.reward, reward
                )));
            }
            if let Some(next_step) = t.steps.get(k + 1) {
                let expected = next.row * width + next.col;
                if next_step.obs != expected {
                    return Err(Error::Contract(format!(
                        "trajectory {} step {}: stored next obs {} but environment yields {}",
                        t.id,
                        k + 1,
                        next_step.obs,
                        expected
                    )));
                }
            }
        }
    }
    Ok(())
}
