//! Token vocabularies with fixed special ids and optional
//! target-language tag tokens for multilingual training.

use std::collections::HashMap;

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const BOS_ID: u32 = 2;
pub const EOS_ID: u32 = 3;

pub const SPECIALS: [&str; 4] = ["<pad>", "<unk>", "<s>", "</s>"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    /// Ids registered as language tags (multilingual specials).
    tags: Vec<u32>,
}

impl Vocabulary {
    /// Reconstruction from stored checkpoint data; the caller has
    /// validated specials and tag ranges.
    pub(crate) fn from_parts(tokens: Vec<String>, tags: Vec<u32>) -> Vocabulary {
        let mut vocab = Vocabulary::from_tokens(tokens);
        vocab.tags = tags;
        vocab
    }

    fn from_tokens(tokens: Vec<String>) -> Vocabulary {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary {
            tokens,
            index,
            tags: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    /// Register target-language tag tokens (e.g. `<2chr>`) as specials.
    /// Re-registering an existing tag is a no-op.
    pub fn add_tags(&mut self, tags: &[String]) {
        for tag in tags {
            if let Some(&id) = self.index.get(tag) {
                if !self.tags.contains(&id) {
                    self.tags.push(id);
                }
                continue;
            }
            let id = self.tokens.len() as u32;
            self.tokens.push(tag.clone());
            self.index.insert(tag.clone(), id);
            self.tags.push(id);
        }
    }

    pub fn is_tag(&self, id: u32) -> bool {
        self.tags.contains(&id)
    }

    pub fn tag_ids(&self) -> &[u32] {
        &self.tags
    }

    pub fn tag_id(&self, tag: &str) -> Option<u32> {
        self.index
            .get(tag)
            .copied()
            .filter(|id| self.tags.contains(id))
    }
}

/// Build a vocabulary from tokenized sentences: specials first, then
/// kept tokens ordered by descending frequency, ties lexicographic.
/// Tokens with count below `max(min_word_freq, 1)` are dropped.
pub fn build_vocab<'a, I, S>(sentences: I, min_word_freq: usize) -> Vocabulary
where
    I: IntoIterator<Item = &'a [S]>,
    S: AsRef<str> + 'a,
{
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for sentence in sentences {
        for token in sentence {
            *counts.entry(token.as_ref()).or_insert(0) += 1;
        }
    }
    let threshold = min_word_freq.max(1) as u64;
    let mut kept: Vec<(&str, u64)> = counts
        .into_iter()
        .filter(|&(token, count)| count >= threshold && !SPECIALS.contains(&token))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    tokens.extend(kept.into_iter().map(|(t, _)| t.to_string()));
    Vocabulary::from_tokens(tokens)
}

/// One vocabulary over several corpora sides (transfer and multilingual
/// training build the joint vocabulary up front).
pub fn build_joint_vocab(sides: &[&[Vec<String>]], min_word_freq: usize) -> Vocabulary {
    let all: Vec<&[String]> = sides
        .iter()
        .flat_map(|side| side.iter().map(Vec::as_slice))
        .collect();
    build_vocab(all, min_word_freq)
}
