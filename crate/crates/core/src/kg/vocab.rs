use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::KgError;

/// Token ↔ dense id mapping. Ids are assigned in insertion order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Returns the id of `token`, inserting it if new.
    pub fn intern(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.ids.get(token) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(token.to_owned());
        self.ids.insert(token.to_owned(), id);
        id
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Reads a dictionary file: one token per line, line number = id.
    pub fn read(path: &Path) -> Result<Self, KgError> {
        let text = std::fs::read_to_string(path).map_err(|source| KgError::Io {
            path: path.to_owned(),
            source,
        })?;
        let mut vocab = Self::new();
        for (i, line) in text.lines().enumerate() {
            // Some dumps carry `token<TAB>id`; the line number wins.
            let token = line.split('\t').next().unwrap_or("").trim();
            if token.is_empty() {
                continue;
            }
            if vocab.id(token).is_some() {
                return Err(KgError::Parse {
                    path: path.to_owned(),
                    line: i + 1,
                    message: format!("duplicate token `{token}`"),
                });
            }
            vocab.intern(token);
        }
        Ok(vocab)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            let _ = writeln!(s, "{t}");
        }
        s
    }
}
