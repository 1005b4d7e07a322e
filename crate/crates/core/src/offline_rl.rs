//! Model-based offline RL for the grid world.
//!
//! A tabular MDP is estimated from the dataset by maximum likelihood over
//! observed transitions. Unobserved state-action pairs route to an absorbing
//! pessimistic sink so planning cannot exploit unmodeled actions. The MDP is
//! solved by synchronous value iteration; ties in the greedy policy break
//! toward the lowest action id.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gridworld::{GridAction, GridLayout};

const MAX_SWEEPS: usize = 10_000;

/// Count-based MDP over grid cells plus one absorbing sink state
/// (index `n_states - 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMDP {
    pub n_states: usize,
    pub n_actions: usize,
    /// Sparse next-state distribution per `(s, a)`, indexed `s * n_actions + a`.
    pub transition: Vec<Vec<(usize, f64)>>,
    pub reward: Vec<f64>,
    /// Observation count per `(s, a)`; zero marks the pessimistic rows.
    pub support: Vec<usize>,
    pub terminal: Vec<bool>,
}

impl TabularMDP {
    pub fn sink(&self) -> usize {
        self.n_states - 1
    }

    fn idx(&self, s: usize, a: usize) -> usize {
        s * self.n_actions + a
    }

    pub fn support_count(&self, s: usize, a: usize) -> usize {
        self.support[self.idx(s, a)]
    }

    /// Each observed row is a probability distribution within `1e-9`.
    pub fn check_rows(&self) -> Result<()> {
        for s in 0..self.n_states {
            if self.terminal[s] {
                continue;
            }
            for a in 0..self.n_actions {
                let row = &self.transition[self.idx(s, a)];
                let sum: f64 = row.iter().map(|&(_, p)| p).sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::Contract(format!(
                        "transition row ({s}, {a}) sums to {sum}"
                    )));
                }
                if !self.reward[self.idx(s, a)].is_finite() {
                    return Err(Error::Contract(format!("reward at ({s}, {a}) is not finite")));
                }
            }
        }
        Ok(())
    }

    /// The full-support model of a layout: true deterministic dynamics for
    /// every non-terminal cell, with the usual pessimistic sink appended.
    pub fn exact_from_layout(layout: &GridLayout, r_pess: f64) -> TabularMDP {
        let n_cells = layout.n_cells();
        let n_states = n_cells + 1;
        let n_actions = 4;
        let sink = n_cells;
        let mut mdp = TabularMDP {
            n_states,
            n_actions,
            transition: vec![Vec::new(); n_states * n_actions],
            reward: vec![0.0; n_states * n_actions],
            support: vec![0; n_states * n_actions],
            terminal: (0..n_states)
                .map(|s| s < n_cells && layout.cell(s / layout.width(), s % layout.width()).is_terminal())
                .collect(),
        };
        for s in 0..n_cells {
            if mdp.terminal[s] || layout.cell(s / layout.width(), s % layout.width()) == crate::gridworld::CellKind::Wall
            {
                continue;
            }
            let state = layout.state_from_index(s).expect("index in range");
            for a in GridAction::ALL {
                let (next, reward, _) = layout.step(&state, a).expect("non-terminal");
                let i = mdp.idx(s, a.id());
                mdp.transition[i] = vec![(layout.cell_index(next.row, next.col), 1.0)];
                mdp.reward[i] = reward;
                mdp.support[i] = 1;
            }
        }
        // wall cells are unreachable; connect them to the sink for totality
        for s in 0..n_cells {
            for a in 0..n_actions {
                let i = mdp.idx(s, a);
                if !mdp.terminal[s] && mdp.transition[i].is_empty() {
                    mdp.transition[i] = vec![(sink, 1.0)];
                    mdp.reward[i] = r_pess;
                }
            }
        }
        for a in 0..n_actions {
            let i = mdp.idx(sink, a);
            mdp.transition[i] = vec![(sink, 1.0)];
            mdp.reward[i] = r_pess;
        }
        mdp
    }
}

/// Maximum-likelihood tabular model from logged transitions. Every
/// unobserved `(s, a)` becomes an absorbing move into the sink with
/// per-step reward `r_pess`.
pub fn fit_model(data: &Dataset, layout: &GridLayout, r_pess: f64) -> Result<TabularMDP> {
    data.check()?;
    let n_cells = layout.n_cells();
    let n_states = n_cells + 1;
    let n_actions = 4;
    let sink = n_cells;

    let mut counts: Vec<std::collections::BTreeMap<usize, usize>> =
        vec![std::collections::BTreeMap::new(); n_states * n_actions];
    let mut reward_sum = vec![0.0; n_states * n_actions];
    let mut support = vec![0usize; n_states * n_actions];

    for traj in &data.trajectories {
        for (k, step) in traj.steps.iter().enumerate() {
            if step.obs >= n_cells {
                return Err(Error::Contract(format!(
                    "trajectory {}: observation {} out of range for {} cells",
                    traj.id, step.obs, n_cells
                )));
            }
            let state = layout.state_from_index(step.obs)?;
            if state.terminal {
                return Err(Error::Contract(format!(
                    "trajectory {}: step {k} leaves a terminal cell",
                    traj.id
                )));
            }
            let action = GridAction::from_id(step.action)?;
            let next_obs = match traj.steps.get(k + 1) {
                Some(next) => next.obs,
                None => {
                    // the final successor is not stored; replay one step
                    let (next, _, _) = layout.step(&state, action)?;
                    layout.cell_index(next.row, next.col)
                }
            };
            let i = step.obs * n_actions + step.action;
            *counts[i].entry(next_obs).or_insert(0) += 1;
            reward_sum[i] += step.reward;
            support[i] += 1;
        }
    }

    let terminal: Vec<bool> = (0..n_states)
        .map(|s| s < n_cells && layout.cell(s / layout.width(), s % layout.width()).is_terminal())
        .collect();

    let mut transition = vec![Vec::new(); n_states * n_actions];
    let mut reward = vec![0.0; n_states * n_actions];
    for s in 0..n_states {
        if terminal[s] {
            continue;
        }
        for a in 0..n_actions {
            let i = s * n_actions + a;
            if support[i] > 0 {
                let total = support[i] as f64;
                transition[i] = counts[i].iter().map(|(&ns, &c)| (ns, c as f64 / total)).collect();
                reward[i] = reward_sum[i] / total;
            } else {
                transition[i] = vec![(sink, 1.0)];
                reward[i] = r_pess;
            }
        }
    }

    let mdp = TabularMDP { n_states, n_actions, transition, reward, support, terminal };
    mdp.check_rows()?;
    Ok(mdp)
}

/// Deterministic greedy policy with its value and action-value tables.
/// Terminal states carry no action and value 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    pub gamma: f64,
    pub actions: Vec<Option<usize>>,
    pub v: Vec<f64>,
    /// `q[s]` is empty at terminal states.
    pub q: Vec<Vec<f64>>,
    pub terminal: Vec<bool>,
}

impl TabularPolicy {
    pub fn n_states(&self) -> usize {
        self.v.len()
    }

    pub fn action(&self, s: usize) -> Result<usize> {
        self.actions
            .get(s)
            .copied()
            .flatten()
            .ok_or_else(|| Error::Contract(format!("state {s} has no policy action")))
    }

    /// Greedy consistency: `v = q[s][action]` and `action` attains the max
    /// with lowest-id tie-breaking.
    pub fn check_greedy(&self) -> Result<()> {
        for s in 0..self.n_states() {
            if self.terminal[s] {
                if self.actions[s].is_some() || !self.q[s].is_empty() || self.v[s] != 0.0 {
                    return Err(Error::Contract(format!("terminal state {s} has outgoing values")));
                }
                continue;
            }
            let a = self.action(s)?;
            if (self.v[s] - self.q[s][a]).abs() > 1e-9 {
                return Err(Error::Contract(format!(
                    "state {s}: v = {} but q[{a}] = {}",
                    self.v[s], self.q[s][a]
                )));
            }
            let best = argmax_lowest(&self.q[s]);
            if a != best {
                return Err(Error::Contract(format!(
                    "state {s}: action {a} is not the lowest-id argmax {best}"
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<TabularPolicy> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Schema { line: 1, msg: format!("bad policy file: {e}") })
    }
}

fn argmax_lowest(q: &[f64]) -> usize {
    let mut best = 0;
    for (a, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = a;
        }
    }
    best
}

/// Synchronous Bellman-optimality sweeps until `max |dV| < tol`.
pub fn value_iteration(mdp: &TabularMDP, gamma: f64, tol: f64) -> Result<TabularPolicy> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Config(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    if !(tol > 0.0) {
        return Err(Error::Config(format!("tol must be positive, got {tol}")));
    }
    mdp.check_rows()?;

    let backup = |s: usize, a: usize, v: &[f64]| -> f64 {
        let i = s * mdp.n_actions + a;
        let mut acc = mdp.reward[i];
        for &(ns, p) in &mdp.transition[i] {
            acc += gamma * p * v[ns];
        }
        acc
    };

    let mut v = vec![0.0; mdp.n_states];
    let mut residual = f64::INFINITY;
    for _sweep in 0..MAX_SWEEPS {
        let mut next = vec![0.0; mdp.n_states];
        for s in 0..mdp.n_states {
            if mdp.terminal[s] {
                continue;
            }
            next[s] = (0..mdp.n_actions)
                .map(|a| backup(s, a, &v))
                .fold(f64::NEG_INFINITY, f64::max);
        }
        residual = v.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if residual < tol {
            let mut q = vec![Vec::new(); mdp.n_states];
            let mut actions = vec![None; mdp.n_states];
            let mut v_final = vec![0.0; mdp.n_states];
            for s in 0..mdp.n_states {
                if mdp.terminal[s] {
                    continue;
                }
                let row: Vec<f64> = (0..mdp.n_actions).map(|a| backup(s, a, &v)).collect();
                let a = argmax_lowest(&row);
                v_final[s] = row[a];
                actions[s] = Some(a);
                q[s] = row;
            }
            return Ok(TabularPolicy {
                gamma,
                actions,
                v: v_final,
                q,
                terminal: mdp.terminal.clone(),
            });
        }
    }
    Err(Error::NonConvergence { sweeps: MAX_SWEEPS, residual })
}

/// Largest `|q[s][a] - (r + gamma * sum p * v')|` over observed and
/// pessimistic rows alike.
pub fn bellman_residual(mdp: &TabularMDP, pol: &TabularPolicy) -> f64 {
    let mut worst = 0.0f64;
    for s in 0..mdp.n_states {
        if mdp.terminal[s] {
            continue;
        }
        for a in 0..mdp.n_actions {
            let i = s * mdp.n_actions + a;
            let mut target = mdp.reward[i];
            for &(ns, p) in &mdp.transition[i] {
                target += pol.gamma * p * pol.v[ns];
            }
            worst = worst.max((pol.q[s][a] - target).abs());
        }
    }
    worst
}

/// Expected value of the start-state distribution under the policy.
pub fn initial_state_value(pol: &TabularPolicy, start_dist: &[f64]) -> Result<f64> {
    if start_dist.len() != pol.n_states() {
        return Err(Error::Dimension { expected: pol.n_states(), got: start_dist.len() });
    }
    if start_dist.iter().any(|&p| p < 0.0 || !p.is_finite()) {
        return Err(Error::Contract("start distribution has negative or non-finite mass".into()));
    }
    let sum: f64 = start_dist.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Contract(format!("start distribution sums to {sum}, expected 1")));
    }
    Ok(start_dist.iter().zip(&pol.v).map(|(p, v)| p * v).sum())
}

/// Uniform distribution over the layout's start cells, sized for an MDP
/// with the trailing sink state.
pub fn start_distribution(layout: &GridLayout) -> Vec<f64> {
    let mut dist = vec![0.0; layout.n_cells() + 1];
    let w = 1.0 / layout.start_states().len() as f64;
    for &(r, c) in layout.start_states() {
        dist[layout.cell_index(r, c)] = w;
    }
    dist
}
