use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;

/// Token ids padded with [`PAD_ID`] up to the context length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    ids: Vec<u32>,
    len: usize,
}

impl TokenSequence {
    /// The full padded sequence.
    pub fn padded(&self) -> &[u32] {
        &self.ids
    }

    /// The unpadded prefix.
    pub fn tokens(&self) -> &[u32] {
        &self.ids[..self.len]
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Lowercase whitespace word tokenizer with a closed vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordTokenizer {
    vocab: Vec<String>,
    context_length: usize,
    index: HashMap<String, u32>,
}

impl WordTokenizer {
    /// Vocabulary: pad, unk, then the sorted distinct words of `texts`.
    pub fn from_texts<S: AsRef<str>>(texts: &[S], context_length: usize) -> Self {
        let words: BTreeSet<String> = texts.iter().flat_map(|t| split_words(t.as_ref())).collect();
        let vocab = [PAD.to_string(), UNK.to_string()].into_iter().chain(words).collect();
        Self::from_vocab(vocab, context_length)
    }

    pub fn from_vocab(vocab: Vec<String>, context_length: usize) -> Self {
        let index = vocab.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        Self {
            vocab,
            context_length,
            index,
        }
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn context_length(&self) -> usize {
        self.context_length
    }

    pub fn tokenize(&self, text: &str) -> Result<TokenSequence> {
        let words = split_words(text);
        if words.is_empty() {
            return Err(Error::Tokenize("empty caption".into()));
        }
        if words.len() > self.context_length {
            return Err(Error::Tokenize(format!(
                "{} tokens exceed the context limit of {} in {text:?}",
                words.len(),
                self.context_length
            )));
        }
        let len = words.len();
        let mut ids: Vec<u32> = words
            .iter()
            .map(|w| self.index.get(w).copied().unwrap_or(UNK_ID))
            .collect();
        ids.resize(self.context_length, PAD_ID);
        Ok(TokenSequence { ids, len })
    }
}

fn split_words(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}
