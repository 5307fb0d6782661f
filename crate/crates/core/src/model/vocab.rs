use std::collections::HashMap;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::model::TokenId;

/// Padding and out-of-vocabulary share this id.
pub const UNKNOWN: TokenId = 0;
pub const START: TokenId = 1;
pub const STOP: TokenId = 2;

pub const UNKNOWN_TOKEN: &str = "<UNK>";
pub const START_TOKEN: &str = "<s>";
pub const STOP_TOKEN: &str = "</s>";

const SPECIALS: [&str; 3] = [UNKNOWN_TOKEN, START_TOKEN, STOP_TOKEN];

/// Token table with dense ids; the first three ids are the special tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocab {
    /// Builds a vocabulary from the non-special tokens; specials are prepended.
    pub fn new<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(words.into_iter().map(Into::into))
            .collect();
        Self::from_tokens(tokens)
    }

    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        for (id, special) in SPECIALS.iter().enumerate() {
            if tokens.get(id).map(String::as_str) != Some(*special) {
                return Err(Error::Format {
                    what: "vocab",
                    detail: format!("line {} must be {special}", id + 1),
                });
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::Format {
                    what: "vocab",
                    detail: format!("line {}: token must be non-empty without whitespace", id + 1),
                });
            }
            if index.insert(tok.clone(), id).is_some() {
                return Err(Error::Format {
                    what: "vocab",
                    detail: format!("duplicate token {tok:?}"),
                });
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Looks up a token; anything unseen maps to [`UNKNOWN`].
    pub fn lookup(&self, token: &str) -> TokenId {
        self.index.get(token).copied().unwrap_or(UNKNOWN)
    }

    pub fn is_special(id: TokenId) -> bool {
        id <= STOP
    }

    /// Whitespace tokenization.
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        text.split_whitespace().map(|w| self.lookup(w)).collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter()
            .map(|&id| self.token(id).unwrap_or(UNKNOWN_TOKEN).to_string())
            .collect()
    }

    pub fn render(&self, ids: &[TokenId]) -> String {
        self.decode(ids).join(" ")
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        for tok in &self.tokens {
            writeln!(out, "{tok}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let tokens = input
            .lines()
            .map(|l| l.map(|s| s.trim_end_matches('\r').to_string()))
            .collect::<std::io::Result<Vec<_>>>()?;
        Self::from_tokens(tokens)
    }
}
