//! Prompt vocabulary: a fixed token list with index 0 reserved for padding.

use std::collections::HashMap;

use crate::error::{Error, Result};

pub const PAD: &str = "<pad>";
pub const PAD_ID: usize = 0;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new(["building", "road", "tank", "change"]).expect("built-in vocabulary")
    }
}

impl Vocabulary {
    /// Builds a vocabulary from prompt tokens; the padding token is prepended.
    pub fn new<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all = vec![PAD.to_owned()];
        all.extend(tokens.into_iter().map(Into::into));
        Self::from_list(all)
    }

    fn from_list(tokens: Vec<String>) -> Result<Self> {
        if tokens.first().map(String::as_str) != Some(PAD) {
            return Err(Error::Config(format!("vocabulary must start with {PAD}")));
        }
        let mut index = HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Config(format!("invalid vocabulary token {t:?}")));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 1
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Result<usize> {
        match self.index.get(token) {
            Some(&i) if i != PAD_ID => Ok(i),
            _ => Err(Error::UnknownToken {
                token: token.to_owned(),
                known: self.tokens[1..].join(", "),
            }),
        }
    }

    /// Splits a prompt on whitespace and maps every word to its index.
    pub fn encode(&self, prompt: &str, max_len: usize) -> Result<Vec<usize>> {
        let ids = prompt
            .split_whitespace()
            .map(|w| self.id(w))
            .collect::<Result<Vec<_>>>()?;
        if ids.is_empty() {
            return Err(Error::Prompt("prompt is empty".into()));
        }
        if ids.len() > max_len {
            return Err(Error::Prompt(format!(
                "prompt has {} tokens, the limit is {max_len}",
                ids.len()
            )));
        }
        Ok(ids)
    }

    /// One token per line; the line number is the index.
    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_list(text.lines().map(str::to_owned).collect())
    }
}
