//! Word-level vocabulary with byte fallback.
//!
//! Tokens are whitespace-separated words plus single punctuation characters.
//! Words outside the vocabulary fall back to their UTF-8 bytes, so encoding
//! is total. The `<graph>` marker is a single reserved token; in assembled
//! sequences it expands into projected graph-token rows.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const SEP: usize = 3;
pub const GRAPH: usize = 4;
const BYTE_BASE: usize = 5;
const WORD_BASE: usize = BYTE_BASE + 256;

pub const GRAPH_MARKER: &str = "<graph>";

#[derive(Clone, Debug)]
pub struct Vocab {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            word.push(ch);
        } else {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
            if !ch.is_whitespace() {
                out.push(ch.to_string());
            }
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

impl Vocab {
    /// Build from a corpus of texts; word tokens are sorted for stability.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Vocab {
        let mut words: BTreeSet<String> = BTreeSet::new();
        for text in texts {
            for segment in text.split(GRAPH_MARKER) {
                for w in split_words(segment) {
                    words.insert(w);
                }
            }
        }
        let mut tokens: Vec<String> = vec![
            "<pad>".into(),
            "<bos>".into(),
            "<eos>".into(),
            "<sep>".into(),
            GRAPH_MARKER.into(),
        ];
        for b in 0..256usize {
            tokens.push(format!("<0x{b:02X}>"));
        }
        tokens.extend(words);
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn lookup(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Encode plain text (no `<graph>` handling).
    fn encode_words(&self, text: &str, out: &mut Vec<usize>) {
        for w in split_words(text) {
            match self.index.get(&w) {
                Some(&id) => out.push(id),
                None => {
                    for b in w.bytes() {
                        out.push(BYTE_BASE + b as usize);
                    }
                }
            }
        }
    }

    /// Encode text in which `<graph>` markers map to the GRAPH token.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        let mut out = Vec::new();
        let mut first = true;
        for segment in text.split(GRAPH_MARKER) {
            if !first {
                out.push(GRAPH);
            }
            first = false;
            self.encode_words(segment, &mut out);
        }
        out
    }

    /// Render token ids back to readable text. Structural specials are
    /// dropped; byte runs are decoded as UTF-8 (lossy).
    pub fn decode(&self, ids: &[usize]) -> String {
        const NO_SPACE_BEFORE: &[&str] = &[".", ",", ":", ";", "!", "?", ")", "]", "}", "'"];
        const NO_SPACE_AFTER: &[&str] = &["(", "[", "{"];
        let mut pieces: Vec<String> = Vec::new();
        let mut bytes: Vec<u8> = Vec::new();
        let flush = |bytes: &mut Vec<u8>, pieces: &mut Vec<String>| {
            if !bytes.is_empty() {
                pieces.push(String::from_utf8_lossy(bytes).into_owned());
                bytes.clear();
            }
        };
        for &id in ids {
            if (BYTE_BASE..WORD_BASE).contains(&id) {
                bytes.push((id - BYTE_BASE) as u8);
                continue;
            }
            flush(&mut bytes, &mut pieces);
            match id {
                PAD | BOS | EOS | SEP => {}
                _ => pieces.push(self.tokens[id].clone()),
            }
        }
        flush(&mut bytes, &mut pieces);

        let mut out = String::new();
        for (i, p) in pieces.iter().enumerate() {
            let no_space = i == 0
                || NO_SPACE_BEFORE.contains(&p.as_str())
                || pieces
                    .get(i.wrapping_sub(1))
                    .map_or(false, |prev| NO_SPACE_AFTER.contains(&prev.as_str()));
            if !no_space {
                out.push(' ');
            }
            out.push_str(p);
        }
        out
    }

    /// Token-per-line file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Vocab> {
        let raw =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let tokens: Vec<String> = raw.lines().map(|l| l.to_string()).collect();
        Self::from_tokens(tokens)
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Vocab> {
        if tokens.len() < WORD_BASE
            || tokens[GRAPH] != GRAPH_MARKER
            || tokens[PAD] != "<pad>"
        {
            return Err(Error::Invalid("malformed vocabulary file".into()));
        }
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Ok(Vocab { tokens, index })
    }
}
