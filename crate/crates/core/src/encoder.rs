//! Recurrent next-token sequence model over tokenized trajectories.
//!
//! Trajectories are tokenized as interleaved `(obs, action, reward)` ids and
//! fed through a single-layer gated recurrent cell trained by full-batch
//! gradient descent on next-token cross-entropy. A trajectory's embedding is
//! the arithmetic mean of the cell's hidden-state outputs over all tokens.

use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Trajectory};
use crate::error::{Error, Result};
use crate::gridworld::GridLayout;

const CHECKPOINT_VERSION: u32 = 1;

/// Token id space: one id per grid cell, per action, per reward bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenVocab {
    pub n_obs: usize,
    pub n_actions: usize,
    /// Exact reward values forming the bucket set, in bucket-id order.
    pub reward_values: Vec<f64>,
}

impl TokenVocab {
    pub fn for_grid(layout: &GridLayout) -> TokenVocab {
        TokenVocab {
            n_obs: layout.n_cells(),
            n_actions: 4,
            reward_values: vec![
                crate::gridworld::REWARD_GOAL,
                crate::gridworld::REWARD_LAVA,
                crate::gridworld::REWARD_STEP,
            ],
        }
    }

    pub fn size(&self) -> usize {
        self.n_obs + self.n_actions + self.reward_values.len()
    }

    pub fn obs_token(&self, obs: usize) -> Result<usize> {
        if obs >= self.n_obs {
            return Err(Error::Contract(format!("observation {obs} outside vocab of {} cells", self.n_obs)));
        }
        Ok(obs)
    }

    pub fn action_token(&self, action: usize) -> Result<usize> {
        if action >= self.n_actions {
            return Err(Error::Contract(format!("action {action} outside vocab of {} actions", self.n_actions)));
        }
        Ok(self.n_obs + action)
    }

    pub fn reward_token(&self, reward: f64) -> Result<usize> {
        match self.reward_values.iter().position(|&r| r == reward) {
            Some(bucket) => Ok(self.n_obs + self.n_actions + bucket),
            None => Err(Error::Contract(format!(
                "reward {reward} not in bucket set {:?}",
                self.reward_values
            ))),
        }
    }
}

/// Interleaves one trajectory into `3T` token ids: `o_1, a_1, r_1, ...`.
pub fn tokenize(traj: &Trajectory, vocab: &TokenVocab) -> Result<Vec<usize>> {
    if traj.steps.is_empty() {
        return Err(Error::Contract(format!("trajectory {} is empty", traj.id)));
    }
    let mut toks = Vec::with_capacity(3 * traj.steps.len());
    for step in &traj.steps {
        toks.push(vocab.obs_token(step.obs)?);
        toks.push(vocab.action_token(step.action)?);
        toks.push(vocab.reward_token(step.reward)?);
    }
    Ok(toks)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig { d_model: 64, learning_rate: 1e-2, epochs: 50, grad_clip: 5.0, seed: 3 }
    }
}

impl EncoderConfig {
    fn validate(&self) -> Result<()> {
        if self.d_model < 2 {
            return Err(Error::Config("d_model must be at least 2".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive and finite".into()));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::Config("grad_clip must be positive".into()));
        }
        Ok(())
    }
}

/// All learnable tensors, row-major with `out x in` weight shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub emb: Vec<f64>, // V x d
    pub wz: Vec<f64>,  // d x d
    pub uz: Vec<f64>,  // d x d
    pub bz: Vec<f64>,  // d
    pub wr: Vec<f64>,
    pub ur: Vec<f64>,
    pub br: Vec<f64>,
    pub wh: Vec<f64>,
    pub uh: Vec<f64>,
    pub bh: Vec<f64>,
    pub wo: Vec<f64>, // V x d
    pub bo: Vec<f64>, // V
}

impl EncoderParams {
    fn zeros(v: usize, d: usize) -> EncoderParams {
        EncoderParams {
            emb: vec![0.0; v * d],
            wz: vec![0.0; d * d],
            uz: vec![0.0; d * d],
            bz: vec![0.0; d],
            wr: vec![0.0; d * d],
            ur: vec![0.0; d * d],
            br: vec![0.0; d],
            wh: vec![0.0; d * d],
            uh: vec![0.0; d * d],
            bh: vec![0.0; d],
            wo: vec![0.0; v * d],
            bo: vec![0.0; v],
        }
    }

    fn init(v: usize, d: usize, seed: u64) -> EncoderParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = EncoderParams::zeros(v, d);
        let fill = |t: &mut [f64], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in t.iter_mut() {
                *w = rng.gen_range(-limit..limit);
            }
        };
        fill(&mut p.emb, v, d, &mut rng);
        fill(&mut p.wz, d, d, &mut rng);
        fill(&mut p.uz, d, d, &mut rng);
        fill(&mut p.wr, d, d, &mut rng);
        fill(&mut p.ur, d, d, &mut rng);
        fill(&mut p.wh, d, d, &mut rng);
        fill(&mut p.uh, d, d, &mut rng);
        fill(&mut p.wo, d, v, &mut rng);
        p
    }

    fn tensors(&self) -> [&Vec<f64>; 12] {
        [
            &self.emb, &self.wz, &self.uz, &self.bz, &self.wr, &self.ur, &self.br, &self.wh,
            &self.uh, &self.bh, &self.wo, &self.bo,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Vec<f64>; 12] {
        [
            &mut self.emb,
            &mut self.wz,
            &mut self.uz,
            &mut self.bz,
            &mut self.wr,
            &mut self.ur,
            &mut self.br,
            &mut self.wh,
            &mut self.uh,
            &mut self.bh,
            &mut self.wo,
            &mut self.bo,
        ]
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Reads one scalar by global flat index over all tensors in order.
    pub fn get_flat(&self, mut index: usize) -> f64 {
        for t in self.tensors() {
            if index < t.len() {
                return t[index];
            }
            index -= t.len();
        }
        panic!("flat index out of range");
    }

    pub fn set_flat(&mut self, mut index: usize, value: f64) {
        for t in self.tensors_mut() {
            if index < t.len() {
                t[index] = value;
                return;
            }
            index -= t.len();
        }
        panic!("flat index out of range");
    }

    fn add_scaled(&mut self, other: &EncoderParams, scale: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    fn sq_norm(&self) -> f64 {
        self.tensors().iter().flat_map(|t| t.iter()).map(|x| x * x).sum()
    }

    fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            for x in t.iter_mut() {
                *x *= s;
            }
        }
    }

    fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }
}

/// Fixed-dimension pooled representation of one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEmbedding {
    pub traj_id: usize,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub vocab: TokenVocab,
    pub config: EncoderConfig,
    pub params: EncoderParams,
    /// Mean next-token cross-entropy: one entry per epoch evaluated before
    /// the update, plus one final post-training entry.
    pub losses: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// y = W x + b with W row-major `rows x cols`.
fn affine(w: &[f64], b: &[f64], x: &[f64], rows: usize, cols: usize, y: &mut [f64]) {
    for i in 0..rows {
        let row = &w[i * cols..(i + 1) * cols];
        let mut acc = b[i];
        for (wj, xj) in row.iter().zip(x) {
            acc += wj * xj;
        }
        y[i] = acc;
    }
}

/// y += W^T g, accumulating input-side gradients.
fn add_transpose_mul(w: &[f64], g: &[f64], rows: usize, cols: usize, y: &mut [f64]) {
    for i in 0..rows {
        let gi = g[i];
        if gi == 0.0 {
            continue;
        }
        let row = &w[i * cols..(i + 1) * cols];
        for (yj, wj) in y.iter_mut().zip(row) {
            *yj += wj * gi;
        }
    }
}

/// dW += g x^T (outer product into a row-major `rows x cols` gradient).
fn add_outer(dw: &mut [f64], g: &[f64], x: &[f64], rows: usize, cols: usize) {
    for i in 0..rows {
        let gi = g[i];
        if gi == 0.0 {
            continue;
        }
        let row = &mut dw[i * cols..(i + 1) * cols];
        for (wj, xj) in row.iter_mut().zip(x) {
            *wj += gi * xj;
        }
    }
}

struct StepCache {
    token: usize,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    g: Vec<f64>,
    h: Vec<f64>,
    /// Softmax over the vocabulary, present only at prediction positions.
    probs: Option<Vec<f64>>,
}

impl Encoder {
    /// Fresh encoder at its seeded initialization, no training steps applied.
    pub fn init(vocab: TokenVocab, config: EncoderConfig) -> Result<Encoder> {
        config.validate()?;
        let params = EncoderParams::init(vocab.size(), config.d_model, config.seed);
        Ok(Encoder { vocab, config, params, losses: Vec::new() })
    }

    pub fn d_model(&self) -> usize {
        self.config.d_model
    }

    /// Runs the recurrent cell over the token sequence. Returns per-token
    /// caches; softmax is evaluated only where `with_loss` needs it.
    fn forward(&self, tokens: &[usize], with_loss: bool) -> (Vec<StepCache>, f64, usize) {
        let d = self.config.d_model;
        let v = self.vocab.size();
        let p = &self.params;
        let mut h = vec![0.0; d];
        let mut caches = Vec::with_capacity(tokens.len());
        let mut loss_sum = 0.0;
        let mut n_pred = 0;

        let mut az = vec![0.0; d];
        let mut ar = vec![0.0; d];
        let mut ah = vec![0.0; d];
        let mut rh = vec![0.0; d];
        let mut logits = vec![0.0; v];

        for (t, &tok) in tokens.iter().enumerate() {
            let x = &p.emb[tok * d..(tok + 1) * d];
            affine(&p.wz, &p.bz, x, d, d, &mut az);
            add_matvec(&p.uz, &h, d, &mut az);
            affine(&p.wr, &p.br, x, d, d, &mut ar);
            add_matvec(&p.ur, &h, d, &mut ar);
            let z: Vec<f64> = az.iter().map(|&a| sigmoid(a)).collect();
            let r: Vec<f64> = ar.iter().map(|&a| sigmoid(a)).collect();
            for i in 0..d {
                rh[i] = r[i] * h[i];
            }
            affine(&p.wh, &p.bh, x, d, d, &mut ah);
            add_matvec(&p.uh, &rh, d, &mut ah);
            let g: Vec<f64> = ah.iter().map(|a| a.tanh()).collect();
            let mut h_new = vec![0.0; d];
            for i in 0..d {
                h_new[i] = (1.0 - z[i]) * h[i] + z[i] * g[i];
            }

            let probs = if with_loss && t + 1 < tokens.len() {
                affine(&p.wo, &p.bo, &h_new, v, d, &mut logits);
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                let mut pr = vec![0.0; v];
                for (pi, &l) in pr.iter_mut().zip(logits.iter()) {
                    *pi = (l - max).exp();
                    sum += *pi;
                }
                for pi in pr.iter_mut() {
                    *pi /= sum;
                }
                loss_sum += -(pr[tokens[t + 1]].max(f64::MIN_POSITIVE)).ln();
                n_pred += 1;
                Some(pr)
            } else {
                None
            };

            caches.push(StepCache {
                token: tok,
                h_prev: h.clone(),
                z,
                r,
                g,
                h: h_new.clone(),
                probs,
            });
            h = h_new;
        }
        (caches, loss_sum, n_pred)
    }

    /// Hidden-state output after each of the `3T` tokens.
    pub fn hidden_states(&self, traj: &Trajectory) -> Result<Vec<Vec<f64>>> {
        let tokens = tokenize(traj, &self.vocab)?;
        let (caches, _, _) = self.forward(&tokens, false);
        Ok(caches.into_iter().map(|c| c.h).collect())
    }

    /// Mean of the per-token hidden-state outputs: `t_j = (sum outputs) / 3T`.
    pub fn encode_trajectory(&self, traj: &Trajectory) -> Result<TrajectoryEmbedding> {
        let tokens = tokenize(traj, &self.vocab)?;
        let (caches, _, _) = self.forward(&tokens, false);
        let d = self.config.d_model;
        let mut mean = vec![0.0; d];
        for c in &caches {
            for i in 0..d {
                mean[i] += c.h[i];
            }
        }
        let n = caches.len() as f64;
        for m in mean.iter_mut() {
            *m /= n;
        }
        Ok(TrajectoryEmbedding { traj_id: traj.id, vector: mean })
    }

    /// Maps [`Encoder::encode_trajectory`] over the dataset in id order.
    pub fn encode_all(&self, data: &Dataset) -> Result<Vec<TrajectoryEmbedding>> {
        data.trajectories
            .iter()
            .map(|t| {
                self.encode_trajectory(t).map_err(|e| {
                    Error::Contract(format!("encoding trajectory {} failed: {e}", t.id))
                })
            })
            .collect()
    }

    /// Sum of per-prediction cross-entropy gradients for one trajectory,
    /// via backpropagation through time.
    fn traj_gradient(&self, tokens: &[usize]) -> (f64, usize, EncoderParams) {
        let d = self.config.d_model;
        let v = self.vocab.size();
        let p = &self.params;
        let (caches, loss_sum, n_pred) = self.forward(tokens, true);
        let mut grad = EncoderParams::zeros(v, d);

        let mut dh_next = vec![0.0; d];
        for (t, cache) in caches.iter().enumerate().rev() {
            let mut dh = dh_next.clone();
            if let Some(probs) = &cache.probs {
                // d loss / d logits = softmax - onehot(target)
                let target = tokens[t + 1];
                let mut dlogits = probs.clone();
                dlogits[target] -= 1.0;
                add_outer(&mut grad.wo, &dlogits, &cache.h, v, d);
                for (gb, dl) in grad.bo.iter_mut().zip(&dlogits) {
                    *gb += dl;
                }
                add_transpose_mul(&p.wo, &dlogits, v, d, &mut dh);
            }

            let h_prev = &cache.h_prev;
            let mut dz = vec![0.0; d];
            let mut dg = vec![0.0; d];
            let mut dh_prev = vec![0.0; d];
            for i in 0..d {
                dz[i] = dh[i] * (cache.g[i] - h_prev[i]);
                dg[i] = dh[i] * cache.z[i];
                dh_prev[i] = dh[i] * (1.0 - cache.z[i]);
            }

            let dah: Vec<f64> = dg.iter().zip(&cache.g).map(|(dgi, gi)| dgi * (1.0 - gi * gi)).collect();
            let rh: Vec<f64> = cache.r.iter().zip(h_prev).map(|(r, h)| r * h).collect();
            let x = &p.emb[cache.token * d..(cache.token + 1) * d];
            add_outer(&mut grad.wh, &dah, x, d, d);
            add_outer(&mut grad.uh, &dah, &rh, d, d);
            for (gb, da) in grad.bh.iter_mut().zip(&dah) {
                *gb += da;
            }
            let mut drh = vec![0.0; d];
            add_transpose_mul(&p.uh, &dah, d, d, &mut drh);
            let dar: Vec<f64> = (0..d)
                .map(|i| drh[i] * h_prev[i] * cache.r[i] * (1.0 - cache.r[i]))
                .collect();
            for i in 0..d {
                dh_prev[i] += drh[i] * cache.r[i];
            }

            let daz: Vec<f64> = (0..d).map(|i| dz[i] * cache.z[i] * (1.0 - cache.z[i])).collect();

            add_outer(&mut grad.wr, &dar, x, d, d);
            add_outer(&mut grad.ur, &dar, h_prev, d, d);
            for (gb, da) in grad.br.iter_mut().zip(&dar) {
                *gb += da;
            }
            add_outer(&mut grad.wz, &daz, x, d, d);
            add_outer(&mut grad.uz, &daz, h_prev, d, d);
            for (gb, da) in grad.bz.iter_mut().zip(&daz) {
                *gb += da;
            }
            add_transpose_mul(&p.ur, &dar, d, d, &mut dh_prev);
            add_transpose_mul(&p.uz, &daz, d, d, &mut dh_prev);

            let dx_slice = &mut grad.emb[cache.token * d..(cache.token + 1) * d];
            let mut dx = vec![0.0; d];
            add_transpose_mul(&p.wz, &daz, d, d, &mut dx);
            add_transpose_mul(&p.wr, &dar, d, d, &mut dx);
            add_transpose_mul(&p.wh, &dah, d, d, &mut dx);
            for (s, v) in dx_slice.iter_mut().zip(&dx) {
                *s += v;
            }

            dh_next = dh_prev;
        }
        (loss_sum, n_pred, grad)
    }

    /// Mean cross-entropy and its full-batch gradient over the dataset.
    pub fn batch_gradient(&self, data: &Dataset) -> Result<(f64, EncoderParams)> {
        let token_seqs: Vec<Vec<usize>> = data
            .trajectories
            .iter()
            .map(|t| tokenize(t, &self.vocab))
            .collect::<Result<_>>()?;
        let parts: Vec<(f64, usize, EncoderParams)> =
            token_seqs.par_iter().map(|toks| self.traj_gradient(toks)).collect();

        let total_pred: usize = parts.iter().map(|p| p.1).sum();
        if total_pred == 0 {
            return Err(Error::Contract(
                "dataset has no prediction targets (all trajectories are single-token)".into(),
            ));
        }
        let mut grad = EncoderParams::zeros(self.vocab.size(), self.config.d_model);
        let mut loss_sum = 0.0;
        // summed in trajectory-id order so parallel scheduling cannot change the result
        for (ls, _, g) in &parts {
            loss_sum += ls;
            grad.add_scaled(g, 1.0);
        }
        grad.scale(1.0 / total_pred as f64);
        Ok((loss_sum / total_pred as f64, grad))
    }

    /// Forward-only mean cross-entropy over the dataset.
    pub fn mean_loss(&self, data: &Dataset) -> Result<f64> {
        let mut loss_sum = 0.0;
        let mut n = 0usize;
        for t in &data.trajectories {
            let tokens = tokenize(t, &self.vocab)?;
            let (_, ls, np) = self.forward(&tokens, true);
            loss_sum += ls;
            n += np;
        }
        if n == 0 {
            return Err(Error::Contract("dataset has no prediction targets".into()));
        }
        Ok(loss_sum / n as f64)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let doc = Checkpoint { version: CHECKPOINT_VERSION, encoder: self.clone() };
        std::fs::write(path, serde_json::to_string(&doc)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Encoder> {
        let text = std::fs::read_to_string(path)?;
        let doc: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::Schema { line: 1, msg: format!("bad encoder checkpoint: {e}") })?;
        if doc.version != CHECKPOINT_VERSION {
            return Err(Error::Schema {
                line: 1,
                msg: format!("checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})", doc.version),
            });
        }
        Ok(doc.encoder)
    }
}

/// out += U h, a plain matvec accumulate.
fn add_matvec(u: &[f64], h: &[f64], d: usize, out: &mut [f64]) {
    for i in 0..d {
        let row = &u[i * d..(i + 1) * d];
        let mut acc = 0.0;
        for (uj, hj) in row.iter().zip(h) {
            acc += uj * hj;
        }
        out[i] += acc;
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    #[serde(flatten)]
    encoder: Encoder,
}

/// Trains by teacher-forced next-token prediction: full-batch gradient
/// descent with global-norm clipping, one update per epoch.
pub fn train_encoder(data: &Dataset, vocab: TokenVocab, cfg: &EncoderConfig) -> Result<Encoder> {
    data.check()?;
    let mut enc = Encoder::init(vocab, *cfg)?;
    for epoch in 0..cfg.epochs {
        let (loss, mut grad) = enc.batch_gradient(data)?;
        if !loss.is_finite() {
            return Err(Error::Diverged(format!(
                "non-finite loss at epoch {epoch} (learning rate {:e})",
                cfg.learning_rate
            )));
        }
        enc.losses.push(loss);
        let norm = grad.sq_norm().sqrt();
        if !norm.is_finite() {
            return Err(Error::Diverged(format!(
                "non-finite gradient at epoch {epoch} (learning rate {:e})",
                cfg.learning_rate
            )));
        }
        if norm > cfg.grad_clip {
            grad.scale(cfg.grad_clip / norm);
        }
        enc.params.add_scaled(&grad, -cfg.learning_rate);
        if !enc.params.is_finite() {
            return Err(Error::Diverged(format!(
                "non-finite parameters after epoch {epoch} (learning rate {:e})",
                cfg.learning_rate
            )));
        }
    }
    enc.losses.push(enc.mean_loss(data)?);
    Ok(enc)
}
