use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub const UNK: &str = "<unk>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const PRE: &str = "<pre>";
pub const SUF: &str = "<suf>";

pub type TokenId = u32;

/// Bidirectional token/id map. Reserved tokens occupy the lowest ids, `<unk>` is always id 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocab {
    /// Builds a vocabulary with `<unk>` followed by `specials`, then every distinct token of
    /// `corpus` in first-seen order.
    pub fn build<'a, I, S>(specials: &[&str], corpus: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: IntoIterator<Item = &'a String>,
    {
        let mut v = Vocab::from_tokens(
            std::iter::once(UNK)
                .chain(specials.iter().copied().filter(|s| *s != UNK))
                .map(str::to_string),
        );
        for seq in corpus {
            for tok in seq {
                v.insert(tok);
            }
        }
        v
    }

    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Self {
        let mut v = Vocab {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in tokens {
            v.insert(&t);
        }
        v
    }

    pub fn insert(&mut self, tok: &str) -> TokenId {
        if let Some(&id) = self.index.get(tok) {
            return id;
        }
        let id = self.tokens.len() as TokenId;
        self.tokens.push(tok.to_string());
        self.index.insert(tok.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, tok: &str) -> Option<TokenId> {
        self.index.get(tok).copied()
    }

    /// Id of `tok`, falling back to `<unk>`.
    pub fn id(&self, tok: &str) -> TokenId {
        self.get(tok).unwrap_or(0)
    }

    pub fn ids<S: AsRef<str>>(&self, toks: &[S]) -> Vec<TokenId> {
        toks.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        Vocab::from_tokens(tokens)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}
