//! Contrastive training of the dual encoder with in-batch negatives.
//!
//! For a batch of `(p_i, c_i, g_i)` drawn from one document,
//!
//! ```text
//! Z(p_i)       = sum_j exp(p_i . c_j) + sum_j exp(p_i . g_j)
//! P(c_i | p_i) = exp(p_i . c_i) / Z(p_i)
//! loss         = -sum_i log P(c_i | p_i)
//! ```
//!
//! The generation sum runs over the whole batch, `g_i` included, unless
//! [`LossConfig::include_own_generation`] is turned off. Log-denominators use log-sum-exp.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::corpus::TrainingTriple;
use crate::encoder::{EncoderParams, Role};
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::{log_sum_exp, Scalar};
use crate::vocab::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeMode {
    /// Other continuations of the batch only.
    InbookOnly,
    /// Generations only (plus the gold continuation in the denominator).
    GenerativeOnly,
    Both,
}

impl NegativeMode {
    pub fn name(self) -> &'static str {
        match self {
            NegativeMode::InbookOnly => "inbook_only",
            NegativeMode::GenerativeOnly => "generative_only",
            NegativeMode::Both => "both",
        }
    }

    pub fn needs_generations(self) -> bool {
        self != NegativeMode::InbookOnly
    }
}

impl std::str::FromStr for NegativeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inbook_only" | "inbook" => Ok(NegativeMode::InbookOnly),
            "generative_only" | "generative" => Ok(NegativeMode::GenerativeOnly),
            "both" => Ok(NegativeMode::Both),
            other => Err(Error::invalid(
                "negative_mode",
                format!("unknown mode `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub mode: NegativeMode,
    pub include_own_generation: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            mode: NegativeMode::Both,
            include_own_generation: true,
        }
    }
}

impl LossConfig {
    pub fn new(mode: NegativeMode) -> Self {
        LossConfig {
            mode,
            ..Default::default()
        }
    }
}

/// One training example as marker-prefixed id sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchItem {
    pub prefix: Vec<TokenId>,
    pub continuation: Vec<TokenId>,
    pub generation: Option<Vec<TokenId>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    pub doc_id: String,
    pub items: Vec<BatchItem>,
}

impl ContrastiveBatch {
    pub fn from_triples<T: Scalar>(
        params: &EncoderParams<T>,
        triples: &[&TrainingTriple],
    ) -> Result<Self> {
        let Some(first) = triples.first() else {
            return Err(Error::invalid("batch", "empty batch"));
        };
        if triples.len() < 2 {
            return Err(Error::invalid("batch", "need at least 2 items"));
        }
        if let Some(t) = triples.iter().find(|t| t.doc_id != first.doc_id) {
            return Err(Error::invalid(
                "batch",
                format!("mixed documents `{}` and `{}`", first.doc_id, t.doc_id),
            ));
        }
        let items = triples
            .iter()
            .map(|t| BatchItem {
                prefix: params.input_ids(&t.prefix, Role::Prefix),
                continuation: params.input_ids(&t.continuation, Role::Suffix),
                generation: t
                    .generation
                    .as_ref()
                    .filter(|g| !g.is_empty())
                    .map(|g| params.input_ids(g, Role::Suffix)),
            })
            .collect();
        Ok(ContrastiveBatch {
            doc_id: first.doc_id.clone(),
            items,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Which encoded vector a denominator term refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Candidate {
    Continuation(usize),
    Generation(usize),
}

/// The candidates in item `i`'s denominator, gold continuation first.
pub fn candidates(i: usize, n: usize, cfg: &LossConfig) -> Vec<Candidate> {
    let mut out = vec![Candidate::Continuation(i)];
    if cfg.mode != NegativeMode::GenerativeOnly {
        out.extend((0..n).filter(|&j| j != i).map(Candidate::Continuation));
    }
    if cfg.mode != NegativeMode::InbookOnly {
        out.extend(
            (0..n)
                .filter(|&j| cfg.include_own_generation || j != i)
                .map(Candidate::Generation),
        );
    }
    out
}

#[derive(Debug, Clone)]
pub struct LossOutput<T> {
    pub loss: T,
    /// `P(c_i | p_i)` per item.
    pub gold_probs: Vec<T>,
    /// Softmax over each item's denominator, aligned with [`candidates`].
    pub candidate_probs: Vec<Vec<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGradient<T> {
    pub embedding: Array2<T>,
    pub projection: Array2<T>,
}

impl<T: Scalar> EncoderGradient<T> {
    pub fn zeros_like(params: &EncoderParams<T>) -> Self {
        EncoderGradient {
            embedding: Array2::zeros(params.embedding.raw_dim()),
            projection: Array2::zeros(params.projection.raw_dim()),
        }
    }
}

struct Encoded<T> {
    prefixes: Vec<Array1<T>>,
    continuations: Vec<Array1<T>>,
    generations: Vec<Option<Array1<T>>>,
}

fn check_batch(batch: &ContrastiveBatch, cfg: &LossConfig) -> Result<()> {
    if batch.len() < 2 {
        return Err(Error::invalid("batch", "need at least 2 items"));
    }
    if cfg.mode.needs_generations() {
        if let Some(i) = batch.items.iter().position(|it| it.generation.is_none()) {
            return Err(Error::MissingGeneration {
                index: i,
                mode: cfg.mode.name(),
            });
        }
    }
    Ok(())
}

fn encode_batch<T: Scalar>(params: &EncoderParams<T>, batch: &ContrastiveBatch) -> Encoded<T> {
    Encoded {
        prefixes: batch
            .items
            .iter()
            .map(|it| params.encode_ids(&it.prefix))
            .collect(),
        continuations: batch
            .items
            .iter()
            .map(|it| params.encode_ids(&it.continuation))
            .collect(),
        generations: batch
            .items
            .iter()
            .map(|it| it.generation.as_ref().map(|g| params.encode_ids(g)))
            .collect(),
    }
}

impl<T: Scalar> Encoded<T> {
    fn vector(&self, c: Candidate) -> &Array1<T> {
        match c {
            Candidate::Continuation(j) => &self.continuations[j],
            Candidate::Generation(j) => self.generations[j].as_ref().expect("checked generation"),
        }
    }
}

fn forward<T: Scalar>(enc: &Encoded<T>, cfg: &LossConfig) -> LossOutput<T> {
    let n = enc.prefixes.len();
    let mut loss = T::zero();
    let mut gold_probs = Vec::with_capacity(n);
    let mut candidate_probs = Vec::with_capacity(n);
    for i in 0..n {
        let cands = candidates(i, n, cfg);
        let logits: Vec<T> = cands
            .iter()
            .map(|&c| enc.prefixes[i].dot(enc.vector(c)))
            .collect();
        let lse = log_sum_exp(&logits);
        loss += lse - logits[0];
        let probs: Vec<T> = logits.iter().map(|&l| (l - lse).exp()).collect();
        gold_probs.push(probs[0]);
        candidate_probs.push(probs);
    }
    LossOutput {
        loss,
        gold_probs,
        candidate_probs,
    }
}

pub fn contrastive_loss<T: Scalar>(
    params: &EncoderParams<T>,
    batch: &ContrastiveBatch,
    cfg: &LossConfig,
) -> Result<LossOutput<T>> {
    check_batch(batch, cfg)?;
    Ok(forward(&encode_batch(params, batch), cfg))
}

/// Adds the gradient flowing into `v = W^T mean(E[ids])` given `dv`.
fn backprop_vector<T: Scalar>(
    params: &EncoderParams<T>,
    ids: &[TokenId],
    dv: &Array1<T>,
    grad: &mut EncoderGradient<T>,
) {
    let pooled = params.mean_pool(ids);
    for (e, &m) in pooled.iter().enumerate() {
        let mut row = grad.projection.row_mut(e);
        row.scaled_add(m, dv);
    }
    let dm = params.projection.dot(dv) / T::of(ids.len() as f64);
    for &id in ids {
        grad.embedding
            .row_mut(id as usize)
            .zip_mut_with(&dm, |g, &d| *g += d);
    }
}

/// Loss together with its analytic gradient with respect to both parameter matrices.
pub fn loss_and_gradient<T: Scalar>(
    params: &EncoderParams<T>,
    batch: &ContrastiveBatch,
    cfg: &LossConfig,
) -> Result<(LossOutput<T>, EncoderGradient<T>)> {
    check_batch(batch, cfg)?;
    let enc = encode_batch(params, batch);
    let out = forward(&enc, cfg);
    let n = batch.len();
    let d = params.d_out();
    let mut d_prefix = vec![Array1::<T>::zeros(d); n];
    let mut d_cont = vec![Array1::<T>::zeros(d); n];
    let mut d_gen = vec![Array1::<T>::zeros(d); n];
    for (i, dp) in d_prefix.iter_mut().enumerate() {
        for (k, &c) in candidates(i, n, cfg).iter().enumerate() {
            let coeff = out.candidate_probs[i][k] - if k == 0 { T::one() } else { T::zero() };
            dp.scaled_add(coeff, enc.vector(c));
            let target = match c {
                Candidate::Continuation(j) => &mut d_cont[j],
                Candidate::Generation(j) => &mut d_gen[j],
            };
            target.scaled_add(coeff, &enc.prefixes[i]);
        }
    }
    let mut grad = EncoderGradient::zeros_like(params);
    for (i, item) in batch.items.iter().enumerate() {
        backprop_vector(params, &item.prefix, &d_prefix[i], &mut grad);
        backprop_vector(params, &item.continuation, &d_cont[i], &mut grad);
        if let Some(g) = &item.generation {
            if cfg.mode.needs_generations() {
                backprop_vector(params, g, &d_gen[i], &mut grad);
            }
        }
    }
    Ok((out, grad))
}

pub fn loss_gradient<T: Scalar>(
    params: &EncoderParams<T>,
    batch: &ContrastiveBatch,
    cfg: &LossConfig,
) -> Result<EncoderGradient<T>> {
    loss_and_gradient(params, batch, cfg).map(|(_, g)| g)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd {
        learning_rate: f64,
    },
    Adam {
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

impl Optimizer {
    pub fn adam(learning_rate: f64) -> Self {
        Optimizer::Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        match *self {
            Optimizer::Sgd { learning_rate } | Optimizer::Adam { learning_rate, .. } => {
                learning_rate
            }
        }
    }
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::adam(1e-2)
    }
}

struct OptimizerState<T> {
    kind: Optimizer,
    step: i32,
    m: EncoderGradient<T>,
    v: EncoderGradient<T>,
}

impl<T: Scalar> OptimizerState<T> {
    fn new(kind: Optimizer, params: &EncoderParams<T>) -> Self {
        OptimizerState {
            kind,
            step: 0,
            m: EncoderGradient::zeros_like(params),
            v: EncoderGradient::zeros_like(params),
        }
    }

    fn apply(&mut self, params: &mut EncoderParams<T>, grad: &EncoderGradient<T>) {
        self.step += 1;
        match self.kind {
            Optimizer::Sgd { learning_rate } => {
                let lr = T::of(learning_rate);
                params.embedding.scaled_add(-lr, &grad.embedding);
                params.projection.scaled_add(-lr, &grad.projection);
            }
            Optimizer::Adam {
                learning_rate,
                beta1,
                beta2,
                eps,
            } => {
                let (b1, b2) = (T::of(beta1), T::of(beta2));
                let lr = T::of(learning_rate);
                let eps = T::of(eps);
                let c1 = T::one() - b1.powi(self.step);
                let c2 = T::one() - b2.powi(self.step);
                let update =
                    |p: &mut Array2<T>, g: &Array2<T>, m: &mut Array2<T>, v: &mut Array2<T>| {
                        Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                            *m = b1 * *m + (T::one() - b1) * g;
                            *v = b2 * *v + (T::one() - b2) * g * g;
                            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                        });
                    };
                update(
                    &mut params.embedding,
                    &grad.embedding,
                    &mut self.m.embedding,
                    &mut self.v.embedding,
                );
                update(
                    &mut params.projection,
                    &grad.projection,
                    &mut self.m.projection,
                    &mut self.v.projection,
                );
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub optimizer: Optimizer,
    pub loss: LossConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            steps: 1000,
            optimizer: Optimizer::default(),
            loss: LossConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: usize,
    pub loss: f64,
}

/// Groups usable triples by document in first-seen order.
fn group_by_document(dataset: &[TrainingTriple], mode: NegativeMode) -> Vec<Vec<&TrainingTriple>> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: HashMap<&str, Vec<&TrainingTriple>> = HashMap::new();
    for t in dataset {
        let usable = !t.prefix.is_empty()
            && !t.continuation.is_empty()
            && (!mode.needs_generations() || t.generation.as_ref().is_some_and(|g| !g.is_empty()));
        if !usable {
            continue;
        }
        groups
            .entry(&t.doc_id)
            .or_insert_with(|| {
                order.push(&t.doc_id);
                Vec::new()
            })
            .push(t);
    }
    order
        .into_iter()
        .map(|d| groups.remove(d).unwrap_or_default())
        .collect()
}

/// Trains with a constant learning rate. Each step samples a document uniformly among those
/// with at least `batch_size` usable items, then `batch_size` distinct items from it.
pub fn train<T: Scalar>(
    mut params: EncoderParams<T>,
    dataset: &[TrainingTriple],
    cfg: &TrainConfig,
) -> Result<(EncoderParams<T>, Vec<LossPoint>)> {
    if cfg.batch_size < 2 {
        return Err(Error::invalid("batch_size", "must be >= 2"));
    }
    let lr = cfg.optimizer.learning_rate();
    if lr.is_nan() || lr <= 0.0 {
        return Err(Error::invalid("learning_rate", "must be > 0"));
    }
    if cfg.steps == 0 {
        return Ok((params, Vec::new()));
    }
    let groups = group_by_document(dataset, cfg.loss.mode);
    let eligible: Vec<&Vec<&TrainingTriple>> = groups
        .iter()
        .filter(|g| g.len() >= cfg.batch_size)
        .collect();
    if eligible.is_empty() {
        return Err(Error::NoEligibleDocument {
            batch_size: cfg.batch_size,
            largest: groups.iter().map(Vec::len).max().unwrap_or(0),
        });
    }
    let mut r = rng::seeded(cfg.seed);
    let mut state = OptimizerState::new(cfg.optimizer, &params);
    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let group = eligible[rng::below(&mut r, eligible.len())];
        let picked: Vec<&TrainingTriple> =
            rng::choose_distinct(&mut r, group.len(), cfg.batch_size)
                .into_iter()
                .map(|i| group[i])
                .collect();
        let batch = ContrastiveBatch::from_triples(&params, &picked)?;
        let (out, grad) = loss_and_gradient(&params, &batch, &cfg.loss)?;
        state.apply(&mut params, &grad);
        let loss = out.loss.as_f64();
        log::debug!("step {step} loss {loss:.6}");
        curve.push(LossPoint { step, loss });
    }
    Ok((params, curve))
}

pub fn write_loss_curve(path: &Path, curve: &[LossPoint]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut body = String::from("step,loss\n");
    for p in curve {
        body.push_str(&format!("{},{}\n", p.step, p.loss));
    }
    f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
}
