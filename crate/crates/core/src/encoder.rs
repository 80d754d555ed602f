//! Dual encoder mapping marker-prefixed token sequences to fixed-size vectors.
//!
//! `encode(tokens, role) = W^T * mean(E[marker], E[t_1], ..., E[t_n])`, where the marker is
//! `<pre>` for prefixes and `<suf>` for continuations. Prefix/continuation compatibility is
//! the dot product of the two vectors. Mean pooling makes the encoding invariant to token
//! order.
//!
//! # Checkpoint layout
//!
//! Little-endian binary:
//!
//! | bytes | content |
//! |---|---|
//! | 8 | magic `RGEN-ENC` |
//! | 4 | version (u32) |
//! | 12 | `d_emb`, `d_out`, vocabulary size (u32 each) |
//! | ... | per token: byte length (u32) then UTF-8 bytes |
//! | ... | embedding matrix, `vocab x d_emb` row-major f32 |
//! | ... | projection matrix, `d_emb x d_out` row-major f32 |

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;
use crate::vocab::{TokenId, Vocab, PRE, SUF};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RGEN-ENC";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const DEFAULT_DIM: usize = 64;
pub const INIT_RANGE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Prefix,
    Suffix,
}

/// A fixed-dimension encoding of a prefix or continuation.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector<T>(pub Array1<T>);

impl<T: Scalar> EmbeddingVector<T> {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn scaled(&self, by: T) -> Self {
        EmbeddingVector(&self.0 * by)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T> {
    pub vocab: Vocab,
    /// `vocab x d_emb`
    pub embedding: Array2<T>,
    /// `d_emb x d_out`
    pub projection: Array2<T>,
}

/// Vocabulary for an encoder: `<unk>`, `<pre>`, `<suf>`, then corpus tokens.
pub fn encoder_vocab<'a, I, S>(corpus: I) -> Vocab
where
    I: IntoIterator<Item = S>,
    S: IntoIterator<Item = &'a String>,
{
    Vocab::build(&[PRE, SUF], corpus)
}

impl<T: Scalar> EncoderParams<T> {
    pub fn zeros(vocab: Vocab, d_emb: usize, d_out: usize) -> Self {
        let v = vocab.len();
        EncoderParams {
            vocab,
            embedding: Array2::zeros((v, d_emb)),
            projection: Array2::zeros((d_emb, d_out)),
        }
    }

    /// Entries uniform in `[-INIT_RANGE, INIT_RANGE]`: embedding row-major first, then projection.
    pub fn random(vocab: Vocab, d_emb: usize, d_out: usize, seed: u64) -> Self {
        Self::random_in(vocab, d_emb, d_out, INIT_RANGE, seed)
    }

    pub fn random_in(vocab: Vocab, d_emb: usize, d_out: usize, range: f64, seed: u64) -> Self {
        let mut p = Self::zeros(vocab, d_emb, d_out);
        let mut r = rng::seeded(seed);
        for x in p.embedding.iter_mut().chain(p.projection.iter_mut()) {
            *x = T::of(rng::uniform_in(&mut r, -range, range));
        }
        p
    }

    pub fn d_emb(&self) -> usize {
        self.embedding.ncols()
    }

    pub fn d_out(&self) -> usize {
        self.projection.ncols()
    }

    pub fn marker(&self, role: Role) -> TokenId {
        self.vocab.id(match role {
            Role::Prefix => PRE,
            Role::Suffix => SUF,
        })
    }

    /// Marker id followed by the token ids (unknown tokens map to `<unk>`).
    pub fn input_ids<S: AsRef<str>>(&self, tokens: &[S], role: Role) -> Vec<TokenId> {
        let mut ids = Vec::with_capacity(tokens.len() + 1);
        ids.push(self.marker(role));
        ids.extend(tokens.iter().map(|t| self.vocab.id(t.as_ref())));
        ids
    }

    pub fn mean_pool(&self, ids: &[TokenId]) -> Array1<T> {
        let mut acc = Array1::zeros(self.d_emb());
        for &id in ids {
            acc += &self.embedding.row(id as usize);
        }
        acc / T::of(ids.len() as f64)
    }

    /// Encodes already-marked ids; see [`EncoderParams::input_ids`].
    pub fn encode_ids(&self, ids: &[TokenId]) -> Array1<T> {
        self.projection.t().dot(&self.mean_pool(ids))
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S], role: Role) -> Result<EmbeddingVector<T>> {
        if tokens.is_empty() {
            return Err(Error::invalid("tokens", "cannot encode an empty sequence"));
        }
        Ok(EmbeddingVector(
            self.encode_ids(&self.input_ids(tokens, role)),
        ))
    }

    pub fn is_finite(&self) -> bool {
        self.embedding
            .iter()
            .chain(self.projection.iter())
            .all(|x| x.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> EncoderParams<U> {
        EncoderParams {
            vocab: self.vocab.clone(),
            embedding: self.embedding.mapv(|x| U::of(x.as_f64())),
            projection: self.projection.mapv(|x| U::of(x.as_f64())),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        for n in [
            CHECKPOINT_VERSION,
            self.d_emb() as u32,
            self.d_out() as u32,
            self.vocab.len() as u32,
        ] {
            out.extend_from_slice(&n.to_le_bytes());
        }
        for tok in self.vocab.tokens() {
            out.extend_from_slice(&(tok.len() as u32).to_le_bytes());
            out.extend_from_slice(tok.as_bytes());
        }
        for x in self.embedding.iter().chain(self.projection.iter()) {
            let v = x.to_f32().expect("finite parameter");
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < CHECKPOINT_MAGIC.len() || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::NotACheckpoint("missing encoder magic bytes".into()));
        }
        let mut r = Reader { bytes, pos: 8 };
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let d_emb = r.u32("d_emb")? as usize;
        let d_out = r.u32("d_out")? as usize;
        let v = r.u32("vocabulary size")? as usize;
        let mut tokens = Vec::with_capacity(v);
        for _ in 0..v {
            let n = r.u32("token length")? as usize;
            let raw = r.take(n, "token bytes")?;
            let tok = std::str::from_utf8(raw)
                .map_err(|_| Error::NotACheckpoint("token is not UTF-8".into()))?;
            tokens.push(tok.to_string());
        }
        let vocab = Vocab::from_tokens(tokens);
        if vocab.len() != v {
            return Err(Error::NotACheckpoint("duplicate vocabulary entries".into()));
        }
        let embedding =
            Array2::from_shape_vec((v, d_emb), r.floats(v * d_emb)?).expect("shape matches length");
        let projection = Array2::from_shape_vec((d_emb, d_out), r.floats(d_emb * d_out)?)
            .expect("shape matches length");
        if r.pos != bytes.len() {
            return Err(Error::NotACheckpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(EncoderParams {
            vocab,
            embedding,
            projection,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Truncated(format!("ran out of bytes reading {what}")));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn floats<T: Scalar>(&mut self, n: usize) -> Result<Vec<T>> {
        let raw = self.take(n * 4, "parameters")?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect())
    }
}

/// Dot product of a prefix and a continuation encoding.
pub fn score<T: Scalar>(prefix: &EmbeddingVector<T>, suffix: &EmbeddingVector<T>) -> Result<T> {
    if prefix.dim() != suffix.dim() {
        return Err(Error::DimensionMismatch {
            left: prefix.dim(),
            right: suffix.dim(),
        });
    }
    Ok(prefix.0.dot(&suffix.0))
}
