//! Sequence encoders producing the hidden state fed to the output layer.
//!
//! Two encoders are provided: a mean of token embeddings, and an LSTM
//! (optionally bidirectional) whose final state is the hidden state. The
//! bidirectional encoder concatenates the final state of the forward pass
//! with the final state of the backward pass, giving `2 · h_dim` outputs.
//!
//! Gate layout inside [`LstmCell`] is `[input; forget; output; candidate]`,
//! each block `h_dim` rows of `W · [x; h_prev] + b`:
//!
//! ```text
//! i = σ(a_i)   f = σ(a_f)   o = σ(a_o)   g = tanh(a_g)
//! c = f ⊙ c_prev + i ⊙ g
//! h = o ⊙ tanh(c)
//! ```
//!
//! Dropout is inverted dropout on the final hidden state only.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Vocab;
use crate::matrix::{axpy, Matrix};

/// Longer sequences are truncated to their first `MAX_TOKENS` tokens.
pub const MAX_TOKENS: usize = 400;

#[derive(Debug, Error, PartialEq)]
pub enum EncoderError {
    #[error("empty token sequence")]
    EmptySequence,
    #[error("dropout rate must lie in [0, 1), got {0}")]
    InvalidDropoutRate(f64),
    #[error("encoder output was produced by an older parameter version")]
    StaleCache,
    #[error("gradient has length {found}, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("token id {0} is outside the embedding table")]
    UnknownToken(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    vocab: Vocab,
    matrix: Matrix,
    /// Whether rows other than `<unk>` are updated during training. The
    /// `<unk>` row is always trainable.
    pub trainable: bool,
}

impl EmbeddingTable {
    pub fn new(vocab: Vocab, matrix: Matrix) -> Self {
        assert_eq!(vocab.len(), matrix.rows(), "one embedding row per vocabulary entry");
        Self {
            vocab,
            matrix,
            trainable: false,
        }
    }

    /// Uniform `[-scale, scale]` rows with a zero `<unk>` row.
    pub fn random<R: Rng + ?Sized>(vocab: Vocab, dim: usize, scale: f64, rng: &mut R) -> Self {
        let mut matrix = Matrix::uniform(vocab.len(), dim, scale, rng);
        matrix.row_mut(vocab.unk()).fill(0.0);
        Self::new(vocab, matrix)
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn unk(&self) -> usize {
        self.vocab.unk()
    }

    pub fn row(&self, id: usize) -> &[f64] {
        self.matrix.row(id)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn matrix_mut(&mut self) -> &mut Matrix {
        &mut self.matrix
    }

    fn check_ids(&self, ids: &[usize]) -> Result<(), EncoderError> {
        if ids.is_empty() {
            return Err(EncoderError::EmptySequence);
        }
        match ids.iter().find(|&&id| id >= self.matrix.rows()) {
            Some(&bad) => Err(EncoderError::UnknownToken(bad)),
            None => Ok(()),
        }
    }
}

/// One direction of an LSTM: `W` is `4·h_dim × (d_emb + h_dim)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCell {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl LstmCell {
    pub fn zeros(d_emb: usize, h_dim: usize) -> Self {
        Self {
            w: Matrix::zeros(4 * h_dim, d_emb + h_dim),
            b: vec![0.0; 4 * h_dim],
        }
    }

    /// Weights uniform in `±sqrt(1/h_dim)`, forget-gate bias 1, other biases 0.
    pub fn init<R: Rng + ?Sized>(d_emb: usize, h_dim: usize, rng: &mut R) -> Self {
        let bound = (1.0 / h_dim as f64).sqrt();
        let mut b = vec![0.0; 4 * h_dim];
        b[h_dim..2 * h_dim].fill(1.0);
        Self {
            w: Matrix::uniform(4 * h_dim, d_emb + h_dim, bound, rng),
            b,
        }
    }

    fn h_dim(&self) -> usize {
        self.b.len() / 4
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub d_emb: usize,
    pub h_dim: usize,
    pub forward: LstmCell,
    pub backward: Option<LstmCell>,
}

impl LstmParams {
    pub fn init<R: Rng + ?Sized>(d_emb: usize, h_dim: usize, bidirectional: bool, rng: &mut R) -> Self {
        let forward = LstmCell::init(d_emb, h_dim, rng);
        let backward = bidirectional.then(|| LstmCell::init(d_emb, h_dim, rng));
        Self {
            d_emb,
            h_dim,
            forward,
            backward,
        }
    }

    pub fn zeros(d_emb: usize, h_dim: usize, bidirectional: bool) -> Self {
        Self {
            d_emb,
            h_dim,
            forward: LstmCell::zeros(d_emb, h_dim),
            backward: bidirectional.then(|| LstmCell::zeros(d_emb, h_dim)),
        }
    }

    pub fn bidirectional(&self) -> bool {
        self.backward.is_some()
    }

    pub fn output_dim(&self) -> usize {
        if self.bidirectional() {
            2 * self.h_dim
        } else {
            self.h_dim
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Mean,
    Lstm,
}

/// Dropout settings for one forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dropout {
    pub rate: f64,
    pub training: bool,
    pub seed: u64,
}

impl Dropout {
    pub const OFF: Dropout = Dropout {
        rate: 0.0,
        training: false,
        seed: 0,
    };

    pub fn training(rate: f64, seed: u64) -> Self {
        Self {
            rate,
            training: true,
            seed,
        }
    }

    fn mask(&self, len: usize) -> Result<Option<Vec<f64>>, EncoderError> {
        if !(0.0..1.0).contains(&self.rate) {
            return Err(EncoderError::InvalidDropoutRate(self.rate));
        }
        if !self.training || self.rate == 0.0 {
            return Ok(None);
        }
        let keep = 1.0 - self.rate;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        Ok(Some(
            (0..len)
                .map(|_| if rng.gen_bool(keep) { 1.0 / keep } else { 0.0 })
                .collect(),
        ))
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Step {
    token: usize,
    z: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    o: Vec<f64>,
    g: Vec<f64>,
    c_prev: Vec<f64>,
    tanh_c: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
enum Cache {
    Mean { ids: Vec<usize> },
    Lstm { forward: Vec<Step>, backward: Option<Vec<Step>> },
}

/// Hidden state plus everything the backward pass needs.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput {
    pub h: Vec<f64>,
    cache: Cache,
    mask: Option<Vec<f64>>,
    version: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmGrads {
    pub forward: LstmCell,
    pub backward: Option<LstmCell>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderGrads {
    pub lstm: Option<LstmGrads>,
    /// Gradient rows keyed by token id, for every token seen in the sequence.
    pub embeddings: BTreeMap<usize, Vec<f64>>,
}

impl EncoderGrads {
    /// Dense gradients laid out like [`Encoder::tensors`].
    pub fn to_dense(&self, enc: &Encoder) -> Vec<Vec<f64>> {
        let d = enc.embeddings.dim();
        let mut emb = vec![0.0; enc.embeddings.matrix.as_slice().len()];
        for (&id, row) in &self.embeddings {
            axpy(1.0, row, &mut emb[id * d..(id + 1) * d]);
        }
        let mut out = vec![emb];
        if let Some(l) = &self.lstm {
            for cell in std::iter::once(&l.forward).chain(l.backward.as_ref()) {
                out.push(cell.w.as_slice().to_vec());
                out.push(cell.b.clone());
            }
        }
        out
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn apply_mask(h: &mut [f64], mask: &Option<Vec<f64>>) {
    if let Some(m) = mask {
        h.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
    }
}

/// Mean of the token embedding rows.
pub fn encode_mean(table: &EmbeddingTable, ids: &[usize]) -> Result<EncoderOutput, EncoderError> {
    encode_mean_with(table, ids, Dropout::OFF)
}

pub fn encode_mean_with(table: &EmbeddingTable, ids: &[usize], dropout: Dropout) -> Result<EncoderOutput, EncoderError> {
    let ids = &ids[..ids.len().min(MAX_TOKENS)];
    table.check_ids(ids)?;
    let mut h = vec![0.0; table.dim()];
    for &id in ids {
        axpy(1.0, table.row(id), &mut h);
    }
    let n = ids.len() as f64;
    h.iter_mut().for_each(|v| *v /= n);
    let mask = dropout.mask(h.len())?;
    apply_mask(&mut h, &mask);
    Ok(EncoderOutput {
        h,
        cache: Cache::Mean { ids: ids.to_vec() },
        mask,
        version: 0,
    })
}

fn run_direction(cell: &LstmCell, table: &EmbeddingTable, order: impl Iterator<Item = usize>) -> (Vec<f64>, Vec<Step>) {
    let hd = cell.h_dim();
    let d = table.dim();
    let mut h = vec![0.0; hd];
    let mut c = vec![0.0; hd];
    let mut steps = Vec::new();
    for token in order {
        let mut z = Vec::with_capacity(d + hd);
        z.extend_from_slice(table.row(token));
        z.extend_from_slice(&h);
        let mut a = cell.w.matvec(&z);
        axpy(1.0, &cell.b, &mut a);
        let i: Vec<f64> = a[..hd].iter().map(|&x| sigmoid(x)).collect();
        let f: Vec<f64> = a[hd..2 * hd].iter().map(|&x| sigmoid(x)).collect();
        let o: Vec<f64> = a[2 * hd..3 * hd].iter().map(|&x| sigmoid(x)).collect();
        let g: Vec<f64> = a[3 * hd..].iter().map(|&x| x.tanh()).collect();
        let c_prev = c.clone();
        for k in 0..hd {
            c[k] = f[k] * c_prev[k] + i[k] * g[k];
        }
        let tanh_c: Vec<f64> = c.iter().map(|x| x.tanh()).collect();
        for k in 0..hd {
            h[k] = o[k] * tanh_c[k];
        }
        steps.push(Step {
            token,
            z,
            i,
            f,
            o,
            g,
            c_prev,
            tanh_c,
        });
    }
    (h, steps)
}

/// Final LSTM state (forward and backward halves concatenated when
/// bidirectional), with inverted dropout in training mode.
pub fn encode_lstm(
    params: &LstmParams,
    table: &EmbeddingTable,
    ids: &[usize],
    dropout: Dropout,
) -> Result<EncoderOutput, EncoderError> {
    let ids = &ids[..ids.len().min(MAX_TOKENS)];
    table.check_ids(ids)?;
    assert_eq!(params.d_emb, table.dim(), "LSTM input size must match embedding dim");
    let (mut h, forward) = run_direction(&params.forward, table, ids.iter().copied());
    let backward = params.backward.as_ref().map(|cell| {
        let (hb, steps) = run_direction(cell, table, ids.iter().rev().copied());
        h.extend_from_slice(&hb);
        steps
    });
    let mask = dropout.mask(h.len())?;
    apply_mask(&mut h, &mask);
    Ok(EncoderOutput {
        h,
        cache: Cache::Lstm { forward, backward },
        mask,
        version: 0,
    })
}

fn backprop_direction(
    cell: &LstmCell,
    steps: &[Step],
    d_h_final: &[f64],
    d_emb: usize,
    emb_grads: &mut BTreeMap<usize, Vec<f64>>,
) -> LstmCell {
    let hd = cell.h_dim();
    let mut grads = LstmCell::zeros(d_emb, hd);
    let mut dh = d_h_final.to_vec();
    let mut dc = vec![0.0; hd];
    // Gate pre-activation gradients per step, newest first; the weight
    // gradient is formed from them row by row after the sweep.
    let mut das: Vec<Vec<f64>> = Vec::with_capacity(steps.len());
    for s in steps.iter().rev() {
        let mut da = vec![0.0; 4 * hd];
        for k in 0..hd {
            let d_o = dh[k] * s.tanh_c[k];
            dc[k] += dh[k] * s.o[k] * (1.0 - s.tanh_c[k] * s.tanh_c[k]);
            let d_i = dc[k] * s.g[k];
            let d_g = dc[k] * s.i[k];
            let d_f = dc[k] * s.c_prev[k];
            da[k] = d_i * s.i[k] * (1.0 - s.i[k]);
            da[hd + k] = d_f * s.f[k] * (1.0 - s.f[k]);
            da[2 * hd + k] = d_o * s.o[k] * (1.0 - s.o[k]);
            da[3 * hd + k] = d_g * (1.0 - s.g[k] * s.g[k]);
            dc[k] *= s.f[k];
        }
        axpy(1.0, &da, &mut grads.b);
        let dz = cell.w.matvec_t(&da);
        let row = emb_grads.entry(s.token).or_insert_with(|| vec![0.0; d_emb]);
        axpy(1.0, &dz[..d_emb], row);
        dh.copy_from_slice(&dz[d_emb..]);
        das.push(da);
    }
    for r in 0..4 * hd {
        let row = grads.w.row_mut(r);
        for (da, s) in das.iter().zip(steps.iter().rev()) {
            if da[r] != 0.0 {
                axpy(da[r], &s.z, row);
            }
        }
    }
    grads
}

/// An embedding table plus an optional recurrent network on top.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub embeddings: EmbeddingTable,
    pub lstm: Option<LstmParams>,
    version: u64,
}

impl Encoder {
    pub fn mean(embeddings: EmbeddingTable) -> Self {
        Self {
            embeddings,
            lstm: None,
            version: 0,
        }
    }

    pub fn lstm(embeddings: EmbeddingTable, params: LstmParams) -> Self {
        Self {
            embeddings,
            lstm: Some(params),
            version: 0,
        }
    }

    pub fn kind(&self) -> EncoderKind {
        if self.lstm.is_some() {
            EncoderKind::Lstm
        } else {
            EncoderKind::Mean
        }
    }

    pub fn output_dim(&self) -> usize {
        self.lstm.as_ref().map_or(self.embeddings.dim(), LstmParams::output_dim)
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Marks cached outputs from before a parameter update as stale.
    pub fn bump_version(&mut self) {
        self.version += 1;
    }

    /// Parameter tensors in a fixed order: embedding matrix, then
    /// `W`, `b` of the forward cell, then `W`, `b` of the backward cell.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = vec![self.embeddings.matrix.as_slice()];
        if let Some(p) = &self.lstm {
            for cell in std::iter::once(&p.forward).chain(p.backward.as_ref()) {
                out.push(cell.w.as_slice());
                out.push(&cell.b);
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![self.embeddings.matrix.as_mut_slice()];
        if let Some(p) = &mut self.lstm {
            for cell in std::iter::once(&mut p.forward).chain(p.backward.as_mut()) {
                out.push(cell.w.as_mut_slice());
                out.push(&mut cell.b);
            }
        }
        out
    }

    pub fn forward(&self, ids: &[usize], dropout: Dropout) -> Result<EncoderOutput, EncoderError> {
        let mut out = match &self.lstm {
            None => encode_mean_with(&self.embeddings, ids, dropout)?,
            Some(p) => encode_lstm(p, &self.embeddings, ids, dropout)?,
        };
        out.version = self.version;
        Ok(out)
    }

    /// Reverse-mode gradients of `d_hidden · h` with respect to every encoder
    /// parameter, replaying the forward pass's dropout mask.
    pub fn backward(&self, out: &EncoderOutput, d_hidden: &[f64]) -> Result<EncoderGrads, EncoderError> {
        if out.version != self.version {
            return Err(EncoderError::StaleCache);
        }
        if d_hidden.len() != out.h.len() {
            return Err(EncoderError::DimensionMismatch {
                expected: out.h.len(),
                found: d_hidden.len(),
            });
        }
        let mut dh = d_hidden.to_vec();
        apply_mask(&mut dh, &out.mask);
        let d = self.embeddings.dim();
        let mut embeddings = BTreeMap::new();
        let lstm = match (&out.cache, &self.lstm) {
            (Cache::Mean { ids }, None) => {
                let scale = 1.0 / ids.len() as f64;
                for &id in ids {
                    let row = embeddings.entry(id).or_insert_with(|| vec![0.0; d]);
                    axpy(scale, &dh, row);
                }
                None
            }
            (Cache::Lstm { forward, backward }, Some(p)) => {
                let hd = p.h_dim;
                let fwd = backprop_direction(&p.forward, forward, &dh[..hd], d, &mut embeddings);
                let bwd = match (backward, &p.backward) {
                    (Some(steps), Some(cell)) => Some(backprop_direction(cell, steps, &dh[hd..], d, &mut embeddings)),
                    _ => None,
                };
                Some(LstmGrads {
                    forward: fwd,
                    backward: bwd,
                })
            }
            _ => return Err(EncoderError::StaleCache),
        };
        Ok(EncoderGrads { lstm, embeddings })
    }
}
