//! The diagnostic model: a masking-aware transformer over the acquired views
//! with two task tokens, feeding a bivariate Gaussian head over (AS, EF).

mod loss;
mod train;

use loss::loss_total_tape;

pub use loss::{as_class_probs, loss_as, loss_ef, loss_total, EF_VAR_FLOOR};
pub use train::{train_diagnostic, TrainLog};

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binfmt::{decode_checkpoint, encode_checkpoint};
use crate::error::{Error, FormatError, Result};
use crate::nn::{Linear, Mlp};
use crate::numerics::{ParamStore, Tape, Tensor, Var};
use crate::probmodel::CategoryGrid;
pub use crate::probmodel::GaussianJoint;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"PDXM";
pub const CHECKPOINT_VERSION: u16 = 1;
/// Correlation is kept strictly inside (-1, 1).
const RHO_MAX: f64 = 0.99;
const TASK_TOKENS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub token_dim: usize,
    pub ff_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { layers: 3, heads: 4, token_dim: 32, ff_dim: 128 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagnosticConfig {
    pub encoder: EncoderConfig,
    /// Width of the hidden layer of both head MLPs.
    pub head_hidden: usize,
    /// Lower bound on each marginal standard deviation.
    pub sigma_min: f64,
    pub lambda_as: f64,
    pub lambda_ef: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Dropout on residual branches and the head input during training.
    pub dropout: f64,
    /// Present each study a second time under a random view subset.
    pub mask_augmentation: bool,
    pub seed: u64,
    pub grid: CategoryGrid,
}

impl Default for DiagnosticConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            head_hidden: 64,
            sigma_min: 1e-3,
            lambda_as: 1.0,
            lambda_ef: 1.0,
            epochs: 50,
            batch_size: 64,
            lr: 1e-3,
            weight_decay: 0.0,
            dropout: 0.1,
            mask_augmentation: true,
            seed: 0,
            grid: CategoryGrid::default(),
        }
    }
}

impl DiagnosticConfig {
    pub fn validate(&self) -> Result<()> {
        let e = &self.encoder;
        if e.layers == 0 || e.heads == 0 || e.token_dim == 0 || e.ff_dim == 0 || self.head_hidden == 0 {
            return Err(Error::Config("encoder and head sizes must be positive".into()));
        }
        if e.token_dim % e.heads != 0 {
            return Err(Error::Config(format!("token_dim {} is not divisible by heads {}", e.token_dim, e.heads)));
        }
        if !(self.sigma_min > 0.0 && self.sigma_min < 1.0) {
            return Err(Error::Config(format!("sigma_min must be in (0, 1), got {}", self.sigma_min)));
        }
        if !(self.lambda_as >= 0.0 && self.lambda_ef >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        if self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(Error::Config("batch_size and lr must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Block {
    ln1: (usize, usize),
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ln2: (usize, usize),
    ff1: Linear,
    ff2: Linear,
}

/// Head outputs on the tape for a batch of `B` states.
pub(crate) struct HeadVars {
    /// `[B, 2]` means in (0, 1).
    pub mu: Var,
    pub sd_as: Var,
    pub sd_ef: Var,
    pub rho: Var,
}

#[derive(Debug, Clone)]
pub struct DiagnosticModel {
    pub config: DiagnosticConfig,
    pub n_views: usize,
    pub embed_dim: usize,
    pub(crate) params: ParamStore,
    /// Projects `[embedding | slot one-hot]`, i.e. a learned linear map of
    /// the view embedding plus a learned per-slot (and task-token) embedding.
    input: Linear,
    blocks: Vec<Block>,
    ln_f: (usize, usize),
    head_h: Mlp,
    head_g: Mlp,
    frozen: bool,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    config: DiagnosticConfig,
    n_views: usize,
    embed_dim: usize,
}

impl DiagnosticModel {
    pub fn new(config: DiagnosticConfig, n_views: usize, embed_dim: usize) -> Result<Self> {
        config.validate()?;
        if n_views == 0 || embed_dim == 0 {
            return Err(Error::Config("model needs at least one view and one embedding dimension".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut ps = ParamStore::new();
        let e = config.encoder.clone();
        let c = e.token_dim;
        let tokens = n_views + TASK_TOKENS;
        let ln = |ps: &mut ParamStore, name: &str| {
            let g = ps.add(format!("{name}.g"), Tensor::new(vec![c], vec![1.0; c]).expect("finite"));
            let b = ps.add(format!("{name}.b"), Tensor::zeros(vec![c]));
            (g, b)
        };
        let input = Linear::new(&mut ps, "input", embed_dim + tokens, c, 1.0, &mut rng);
        let residual_gain = 1.0 / (2.0 * e.layers as f64).sqrt();
        let blocks = (0..e.layers)
            .map(|l| {
                let p = format!("block{l}");
                Block {
                    ln1: ln(&mut ps, &format!("{p}.ln1")),
                    q: Linear::new(&mut ps, &format!("{p}.q"), c, c, 1.0, &mut rng),
                    k: Linear::new(&mut ps, &format!("{p}.k"), c, c, 1.0, &mut rng),
                    v: Linear::new(&mut ps, &format!("{p}.v"), c, c, 1.0, &mut rng),
                    o: Linear::new(&mut ps, &format!("{p}.o"), c, c, residual_gain, &mut rng),
                    ln2: ln(&mut ps, &format!("{p}.ln2")),
                    ff1: Linear::new(&mut ps, &format!("{p}.ff1"), c, e.ff_dim, 1.0, &mut rng),
                    ff2: Linear::new(&mut ps, &format!("{p}.ff2"), e.ff_dim, c, residual_gain, &mut rng),
                }
            })
            .collect();
        let ln_f = ln(&mut ps, "ln_f");
        let h = config.head_hidden;
        let head_h = Mlp::new(&mut ps, "head_h", &[2 * c, h, 2], 1.0, &mut rng);
        let head_g = Mlp::new(&mut ps, "head_g", &[2 * c, h, 3], 1.0, &mut rng);
        // Neither marginal loss reaches the correlation output, so it is
        // initialised to produce rho = 0 rather than an arbitrary value.
        let last = *head_g.layers.last().expect("head has layers");
        {
            let t = &mut ps.tensors_mut()[last.w];
            let vals = t.values_mut();
            for row in vals.chunks_mut(3) {
                row[2] = 0.0;
            }
        }
        Ok(Self { config, n_views, embed_dim, params: ps, input, blocks, ln_f, head_h, head_g, frozen: false })
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn grid(&self) -> &CategoryGrid {
        &self.config.grid
    }

    fn tokens(&self) -> usize {
        self.n_views + TASK_TOKENS
    }

    fn check_input(&self, embeddings: &[f64], masks: &[bool]) -> Result<usize> {
        let (n, d) = (self.n_views, self.embed_dim);
        if masks.len() % n != 0 || embeddings.len() != masks.len() * d {
            return Err(Error::Config(format!(
                "expected {n} views of dimension {d}; got {} values for {} mask bits",
                embeddings.len(),
                masks.len()
            )));
        }
        Ok(masks.len() / n)
    }

    /// Input rows `[embedding | slot one-hot]` for every token; task tokens
    /// come first. Masked views contribute zeros regardless of their content.
    fn input_matrix(&self, embeddings: &[f64], masks: &[bool], batch: usize) -> Vec<f64> {
        let (n, d, t) = (self.n_views, self.embed_dim, self.tokens());
        let width = d + t;
        let mut x = vec![0.0; batch * t * width];
        for b in 0..batch {
            for tok in 0..t {
                let row = &mut x[(b * t + tok) * width..(b * t + tok + 1) * width];
                row[d + tok] = 1.0;
                if tok >= TASK_TOKENS {
                    let v = tok - TASK_TOKENS;
                    if masks[b * n + v] {
                        row[..d].copy_from_slice(&embeddings[(b * n + v) * d..(b * n + v + 1) * d]);
                    }
                }
            }
        }
        x
    }

    /// Attention mask `[B, H, T, T]`: valid tokens see valid tokens; a masked
    /// view token sees only itself and is seen by no other token.
    fn attention_mask(&self, masks: &[bool], batch: usize) -> Vec<bool> {
        let (n, t, h) = (self.n_views, self.tokens(), self.config.encoder.heads);
        let mut out = Vec::with_capacity(batch * h * t * t);
        for b in 0..batch {
            let valid = |i: usize| i < TASK_TOKENS || masks[b * n + i - TASK_TOKENS];
            let mut one = Vec::with_capacity(t * t);
            for i in 0..t {
                for j in 0..t {
                    one.push(i == j || (valid(i) && valid(j)));
                }
            }
            for _ in 0..h {
                out.extend_from_slice(&one);
            }
        }
        out
    }

    /// Encoder output for the two task tokens, concatenated: `[B, 2C]`.
    pub(crate) fn encode_vars(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        embeddings: &[f64],
        masks: &[bool],
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let p = self.config.dropout;
        let mut drop = |tape: &mut Tape, x: Var| -> Result<Var> {
            match dropout_rng.as_deref_mut() {
                Some(rng) if p > 0.0 => {
                    let keep: Vec<f64> =
                        (0..tape.numel(x)).map(|_| if rng.gen::<f64>() < p { 0.0 } else { 1.0 / (1.0 - p) }).collect();
                    Ok(tape.mul_const(x, &keep)?)
                }
                _ => Ok(x),
            }
        };
        let batch = self.check_input(embeddings, masks)?;
        let e = &self.config.encoder;
        let (t, c, heads) = (self.tokens(), e.token_dim, e.heads);
        let dh = c / heads;
        let xin = tape.constant(vec![batch * t, self.embed_dim + t], self.input_matrix(embeddings, masks, batch))?;
        let attn_mask = self.attention_mask(masks, batch);
        let mut x = self.input.forward(tape, vars, xin)?;
        let split = |tape: &mut Tape, y: Var| -> Result<Var> {
            let y = tape.reshape(y, vec![batch, t, heads, dh])?;
            let y = tape.permute_0213(y)?;
            Ok(tape.reshape(y, vec![batch * heads, t, dh])?)
        };
        for blk in &self.blocks {
            let h = tape.layer_norm(x, vars[blk.ln1.0], vars[blk.ln1.1])?;
            let q = blk.q.forward(tape, vars, h)?;
            let k = blk.k.forward(tape, vars, h)?;
            let v = blk.v.forward(tape, vars, h)?;
            let (q, k, v) = (split(tape, q)?, split(tape, k)?, split(tape, v)?);
            let s = tape.bmm(q, k, true)?;
            let s = tape.scale(s, 1.0 / (dh as f64).sqrt())?;
            let p = tape.masked_softmax(s, &attn_mask)?;
            let o = tape.bmm(p, v, false)?;
            let o = tape.reshape(o, vec![batch, heads, t, dh])?;
            let o = tape.permute_0213(o)?;
            let o = tape.reshape(o, vec![batch * t, c])?;
            let o = blk.o.forward(tape, vars, o)?;
            let o = drop(tape, o)?;
            x = tape.add(x, o)?;
            let h = tape.layer_norm(x, vars[blk.ln2.0], vars[blk.ln2.1])?;
            let f = blk.ff1.forward(tape, vars, h)?;
            let f = tape.gelu(f)?;
            let f = blk.ff2.forward(tape, vars, f)?;
            let f = drop(tape, f)?;
            x = tape.add(x, f)?;
        }
        let x = tape.layer_norm(x, vars[self.ln_f.0], vars[self.ln_f.1])?;
        let as_rows: Vec<usize> = (0..batch).map(|b| b * t).collect();
        let ef_rows: Vec<usize> = (0..batch).map(|b| b * t + 1).collect();
        let a = tape.gather_rows(x, &as_rows)?;
        let f = tape.gather_rows(x, &ef_rows)?;
        let z = tape.concat_cols(a, f)?;
        drop(tape, z)
    }

    /// Head outputs; passing an RNG turns on dropout (training mode).
    pub(crate) fn forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        embeddings: &[f64],
        masks: &[bool],
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<HeadVars> {
        let z = self.encode_vars(tape, vars, embeddings, masks, dropout_rng)?;
        let batch = tape.shape(z)[0];
        let h = self.head_h.forward(tape, vars, z)?;
        let mu = tape.sigmoid(h)?;
        let g = self.head_g.forward(tape, vars, z)?;
        let smin = self.config.sigma_min;
        let sd = |tape: &mut Tape, col: usize| -> Result<Var> {
            let u = tape.slice_cols(g, col, col + 1)?;
            let u = tape.reshape(u, vec![batch])?;
            let s = tape.sigmoid(u)?;
            let s = tape.scale(s, 1.0 - smin)?;
            Ok(tape.add_scalar(s, smin)?)
        };
        let sd_as = sd(tape, 0)?;
        let sd_ef = sd(tape, 1)?;
        let r = tape.slice_cols(g, 2, 3)?;
        let r = tape.reshape(r, vec![batch])?;
        let r = tape.tanh(r)?;
        let rho = tape.scale(r, RHO_MAX)?;
        Ok(HeadVars { mu, sd_as, sd_ef, rho })
    }

    /// Batch-mean weighted NLL without dropout, and its gradient with
    /// respect to the flattened parameters (same order as `flat_params`).
    pub fn loss_and_grad(
        &self,
        embeddings: &[f64],
        masks: &[bool],
        classes: &[usize],
        y_ef: &[f64],
    ) -> Result<(f64, Vec<f64>)> {
        let batch = self.check_input(embeddings, masks)?;
        if classes.len() != batch || y_ef.len() != batch {
            return Err(Error::Config(format!(
                "{} classes and {} EF labels for {batch} states",
                classes.len(),
                y_ef.len()
            )));
        }
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let hv = self.forward(&mut tape, &vars, embeddings, masks, None)?;
        let c = &self.config;
        let loss = loss_total_tape(&mut tape, &hv, classes, y_ef, c.lambda_as, c.lambda_ef, &c.grid)?;
        tape.backward(loss)?;
        let mut params = self.params.clone();
        params.zero_grad();
        params.accumulate_grads(&tape, &vars)?;
        Ok((tape.item(loss), params.flat_grad()))
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.params.flatten()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        Ok(self.params.load_flat(flat)?)
    }

    /// Task-token encodings `(token_as, token_ef)` for one state.
    pub fn encode(&self, embeddings: &[f64], mask: &[bool]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let z = self.encode_vars(&mut tape, &vars, embeddings, mask, None)?;
        let c = self.config.encoder.token_dim;
        let v = tape.value(z);
        if v.len() != 2 * c {
            return Err(Error::Config("encode takes exactly one state".into()));
        }
        Ok((v[..c].to_vec(), v[c..].to_vec()))
    }

    /// Joint predictions for a batch of states. `embeddings` is
    /// `B x n_views x embed_dim`, `masks` is `B x n_views`.
    pub fn predict_batch(&self, embeddings: &[f64], masks: &[bool]) -> Result<Vec<GaussianJoint>> {
        let batch = self.check_input(embeddings, masks)?;
        let (n, d) = (self.n_views, self.embed_dim);
        const CHUNK: usize = 256;
        let mut out = Vec::with_capacity(batch);
        let mut tape = Tape::new();
        for start in (0..batch).step_by(CHUNK) {
            let end = (start + CHUNK).min(batch);
            tape.clear();
            let vars = self.params.bind(&mut tape);
            let hv = self.forward(
                &mut tape,
                &vars,
                &embeddings[start * n * d..end * n * d],
                &masks[start * n..end * n],
                None,
            )?;
            let (mu, sa, se, rho) = (tape.value(hv.mu), tape.value(hv.sd_as), tape.value(hv.sd_ef), tape.value(hv.rho));
            for i in 0..end - start {
                out.push(GaussianJoint::from_moments([mu[2 * i], mu[2 * i + 1]], [sa[i], se[i]], rho[i])?);
            }
        }
        Ok(out)
    }

    /// Joint prediction for one state (`n_views x embed_dim` embeddings).
    pub fn predict(&self, embeddings: &[f64], mask: &[bool]) -> Result<GaussianJoint> {
        if mask.len() != self.n_views {
            return Err(Error::Config(format!("mask has {} entries for {} views", mask.len(), self.n_views)));
        }
        Ok(self.predict_batch(embeddings, mask)?.remove(0))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = CheckpointHeader { config: self.config.clone(), n_views: self.n_views, embed_dim: self.embed_dim };
        encode_checkpoint(
            CHECKPOINT_MAGIC,
            CHECKPOINT_VERSION,
            &serde_json::to_vec(&header).expect("header serialises"),
            &self.params.flatten(),
        )
    }

    /// Restores a model; loaded models are frozen.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (hdr, weights) = decode_checkpoint(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, bytes)?;
        let h: CheckpointHeader =
            serde_json::from_slice(&hdr).map_err(|e| FormatError::Malformed(format!("checkpoint header: {e}")))?;
        let mut m = Self::new(h.config, h.n_views, h.embed_dim)?;
        m.params.load_flat(&weights).map_err(|e| FormatError::Malformed(format!("weights: {e}")))?;
        m.frozen = true;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny() -> DiagnosticModel {
        let cfg = DiagnosticConfig {
            encoder: EncoderConfig { layers: 2, heads: 2, token_dim: 8, ff_dim: 16 },
            head_hidden: 8,
            seed: 5,
            ..Default::default()
        };
        DiagnosticModel::new(cfg, 3, 4).unwrap()
    }

    fn random_state(rng: &mut ChaCha8Rng, n: usize, d: usize) -> (Vec<f64>, Vec<bool>) {
        let e = (0..n * d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let m = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        (e, m)
    }

    #[test]
    fn tape_loss_matches_scalar_loss_and_finite_differences() {
        let mut m = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let states: Vec<_> = (0..4).map(|_| random_state(&mut rng, 3, 4)).collect();
        let e: Vec<f64> = states.iter().flat_map(|s| s.0.clone()).collect();
        let k: Vec<bool> = states.iter().flat_map(|s| s.1.clone()).collect();
        let classes = [0, 2, 1, 2];
        let y = [0.2, 0.55, 0.7, 0.41];
        let (loss, grad) = m.loss_and_grad(&e, &k, &classes, &y).unwrap();

        let c = &m.config;
        let scalar: f64 = m
            .predict_batch(&e, &k)
            .unwrap()
            .iter()
            .enumerate()
            .map(|(i, j)| loss_total(j, classes[i], y[i], c.lambda_as, c.lambda_ef, &c.grid).unwrap())
            .sum::<f64>()
            / 4.0;
        assert!((loss - scalar).abs() < 1e-10, "{loss} vs {scalar}");

        let w = m.flat_params();
        for i in (0..w.len()).step_by(7) {
            let mut x = w.clone();
            x[i] += 1e-6;
            m.set_flat_params(&x).unwrap();
            let up = m.loss_and_grad(&e, &k, &classes, &y).unwrap().0;
            x[i] -= 2e-6;
            m.set_flat_params(&x).unwrap();
            let down = m.loss_and_grad(&e, &k, &classes, &y).unwrap().0;
            let fd = (up - down) / 2e-6;
            assert!((fd - grad[i]).abs() <= 1e-6 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn masked_content_is_ignored_exactly() {
        let m = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let (e, mask) = random_state(&mut rng, 3, 4);
            let mut e2 = e.clone();
            for v in (0..3).filter(|&v| !mask[v]) {
                for j in 0..4 {
                    e2[v * 4 + j] = rng.gen_range(-100.0..100.0);
                }
            }
            assert_eq!(m.predict(&e, &mask).unwrap(), m.predict(&e2, &mask).unwrap());
            assert_eq!(m.encode(&e, &mask).unwrap(), m.encode(&e2, &mask).unwrap());
        }
    }

    #[test]
    fn empty_state_is_patient_independent() {
        let m = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (a, _) = random_state(&mut rng, 3, 4);
        let (b, _) = random_state(&mut rng, 3, 4);
        let none = [false; 3];
        assert_eq!(m.predict(&a, &none).unwrap(), m.predict(&b, &none).unwrap());
    }

    #[test]
    fn batch_matches_single() {
        let m = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let states: Vec<_> = (0..7).map(|_| random_state(&mut rng, 3, 4)).collect();
        let e: Vec<f64> = states.iter().flat_map(|s| s.0.clone()).collect();
        let k: Vec<bool> = states.iter().flat_map(|s| s.1.clone()).collect();
        let batch = m.predict_batch(&e, &k).unwrap();
        for (s, j) in states.iter().zip(&batch) {
            let single = m.predict(&s.0, &s.1).unwrap();
            assert!((single.mu[0] - j.mu[0]).abs() < 1e-12 && (single.l22 - j.l22).abs() < 1e-12);
        }
    }

    #[test]
    fn outputs_are_valid_gaussians() {
        let m = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let (e, mask) = random_state(&mut rng, 3, 4);
            let j = m.predict(&e, &mask).unwrap();
            assert!(j.mu.iter().all(|x| (0.0..=1.0).contains(x)));
            assert!(j.eigenvalues()[0] > 0.0);
            let s = j.covariance();
            assert_eq!(s[0][1], s[1][0]);
            assert!(j.std_devs().iter().all(|&s| s > 0.0 && s <= 1.0));
        }
    }

    #[test]
    fn wrong_embedding_width_is_config_error() {
        let m = tiny();
        assert!(matches!(m.predict(&[0.0; 5], &[true; 3]), Err(Error::Config(_))));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let m = tiny();
        let back = DiagnosticModel::from_bytes(&m.to_bytes()).unwrap();
        assert!(back.is_frozen());
        let e = vec![0.3; 12];
        let mask = [true, false, true];
        assert_eq!(m.predict(&e, &mask).unwrap(), back.predict(&e, &mask).unwrap());
        let mut bad = m.to_bytes();
        bad[0] = b'Q';
        assert!(matches!(DiagnosticModel::from_bytes(&bad), Err(Error::Format(FormatError::BadMagic { .. }))));
    }

    #[test]
    fn heads_must_divide_token_dim() {
        let cfg = DiagnosticConfig { encoder: EncoderConfig { heads: 3, ..Default::default() }, ..Default::default() };
        assert!(matches!(DiagnosticModel::new(cfg, 5, 8), Err(Error::Config(_))));
    }
}
